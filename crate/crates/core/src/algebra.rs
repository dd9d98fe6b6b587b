//! Pointwise algebra of the two-species model: the diffusion, reaction and
//! growth maps, their Jacobians, the coefficient conditions and the sampled
//! positivity certificate for the diffusion matrix.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Result, SktError};

/// Model constants. `d0` is derived; `alpha` is the positivity margin of the
/// diffusion matrix, normally filled in by [`max_alpha`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coefficients {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
    pub b1: f64,
    pub b2: f64,
    pub c1: f64,
    pub c2: f64,
    pub a1: f64,
    pub a2: f64,
    pub d1: f64,
    pub d2: f64,
    pub alpha: f64,
}

impl Coefficients {
    /// Validating constructor. Arguments follow the field order
    /// `a11 a12 a21 a22 b1 b2 c1 c2 a1 a2 d1 d2`; `alpha` starts at zero.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a11: f64,
        a12: f64,
        a21: f64,
        a22: f64,
        b1: f64,
        b2: f64,
        c1: f64,
        c2: f64,
        a1: f64,
        a2: f64,
        d1: f64,
        d2: f64,
    ) -> Result<Self> {
        let c = Coefficients {
            a11,
            a12,
            a21,
            a22,
            b1,
            b2,
            c1,
            c2,
            a1,
            a2,
            d1,
            d2,
            alpha: 0.0,
        };
        c.validate()?;
        Ok(c)
    }

    /// Every constant equal to one.
    pub fn unit() -> Self {
        Coefficients::new(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
            .expect("unit coefficients are valid")
    }

    /// Pure linear diffusion `d1 Δu`, `d2 Δv` with every other term switched off.
    pub fn heat(d1: f64, d2: f64) -> Result<Self> {
        Coefficients::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, d1, d2)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn named_values(&self) -> [(&'static str, f64); 13] {
        [
            ("a11", self.a11),
            ("a12", self.a12),
            ("a21", self.a21),
            ("a22", self.a22),
            ("b1", self.b1),
            ("b2", self.b2),
            ("c1", self.c1),
            ("c2", self.c2),
            ("a1", self.a1),
            ("a2", self.a2),
            ("d1", self.d1),
            ("d2", self.d2),
            ("alpha", self.alpha),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in self.named_values() {
            if !value.is_finite() || value < 0.0 {
                return Err(SktError::Domain(format!(
                    "coefficient {name} = {value} must be finite and nonnegative"
                )));
            }
        }
        Ok(())
    }

    pub fn d0(&self) -> f64 {
        self.d1.min(self.d2)
    }

    #[inline]
    pub(crate) fn p(&self, s: SpeciesPair) -> SpeciesPair {
        SpeciesPair::new(
            (self.d1 + self.a11 * s.u + self.a12 * s.v) * s.u,
            (self.d2 + self.a21 * s.u + self.a22 * s.v) * s.v,
        )
    }

    #[inline]
    pub(crate) fn q(&self, s: SpeciesPair) -> SpeciesPair {
        SpeciesPair::new(
            (self.b1 * s.u + self.c1 * s.v) * s.u,
            (self.b2 * s.u + self.c2 * s.v) * s.v,
        )
    }

    #[inline]
    pub(crate) fn l(&self, s: SpeciesPair) -> SpeciesPair {
        SpeciesPair::new(self.a1 * s.u, self.a2 * s.v)
    }

    /// Jacobian of `p`. The (2,2) entry carries `2·a22·v`, the derivative of
    /// `a22·v²`.
    #[inline]
    pub(crate) fn jac_p(&self, s: SpeciesPair) -> Matrix2 {
        Matrix2::new(
            self.d1 + 2.0 * self.a11 * s.u + self.a12 * s.v,
            self.a12 * s.u,
            self.a21 * s.v,
            self.d2 + self.a21 * s.u + 2.0 * self.a22 * s.v,
        )
    }

    #[inline]
    pub(crate) fn jac_q(&self, s: SpeciesPair) -> Matrix2 {
        Matrix2::new(
            2.0 * self.b1 * s.u + self.c1 * s.v,
            self.c1 * s.u,
            self.b2 * s.v,
            self.b2 * s.u + 2.0 * self.c2 * s.v,
        )
    }
}

/// A pair of values, one per species. Entries may be negative so the same
/// type carries differences of states.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SpeciesPair {
    pub u: f64,
    pub v: f64,
}

impl SpeciesPair {
    pub const ZERO: SpeciesPair = SpeciesPair { u: 0.0, v: 0.0 };

    pub const fn new(u: f64, v: f64) -> Self {
        SpeciesPair { u, v }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    pub fn dot(&self, other: SpeciesPair) -> f64 {
        self.u * other.u + self.v * other.v
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(*self)
    }

    fn check_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(SktError::Domain(format!(
                "non-finite state ({}, {})",
                self.u, self.v
            )))
        }
    }

    fn check_nonnegative(&self) -> Result<()> {
        self.check_finite()?;
        if self.u < 0.0 || self.v < 0.0 {
            return Err(SktError::Domain(format!(
                "state ({}, {}) must be nonnegative",
                self.u, self.v
            )));
        }
        Ok(())
    }
}

impl Add for SpeciesPair {
    type Output = SpeciesPair;
    fn add(self, rhs: SpeciesPair) -> SpeciesPair {
        SpeciesPair::new(self.u + rhs.u, self.v + rhs.v)
    }
}

impl Sub for SpeciesPair {
    type Output = SpeciesPair;
    fn sub(self, rhs: SpeciesPair) -> SpeciesPair {
        SpeciesPair::new(self.u - rhs.u, self.v - rhs.v)
    }
}

impl Neg for SpeciesPair {
    type Output = SpeciesPair;
    fn neg(self) -> SpeciesPair {
        SpeciesPair::new(-self.u, -self.v)
    }
}

impl Mul<SpeciesPair> for f64 {
    type Output = SpeciesPair;
    fn mul(self, rhs: SpeciesPair) -> SpeciesPair {
        SpeciesPair::new(self * rhs.u, self * rhs.v)
    }
}

/// Dense 2×2 matrix, row major.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Matrix2 {
    pub m11: f64,
    pub m12: f64,
    pub m21: f64,
    pub m22: f64,
}

impl Matrix2 {
    pub const ZERO: Matrix2 = Matrix2::new(0.0, 0.0, 0.0, 0.0);
    pub const IDENTITY: Matrix2 = Matrix2::new(1.0, 0.0, 0.0, 1.0);

    pub const fn new(m11: f64, m12: f64, m21: f64, m22: f64) -> Self {
        Matrix2 { m11, m12, m21, m22 }
    }

    pub const fn diag(a: f64, b: f64) -> Self {
        Matrix2::new(a, 0.0, 0.0, b)
    }

    #[inline]
    pub fn mul_vec(&self, x: SpeciesPair) -> SpeciesPair {
        SpeciesPair::new(
            self.m11 * x.u + self.m12 * x.v,
            self.m21 * x.u + self.m22 * x.v,
        )
    }

    #[inline]
    pub fn mul_mat(&self, o: &Matrix2) -> Matrix2 {
        Matrix2::new(
            self.m11 * o.m11 + self.m12 * o.m21,
            self.m11 * o.m12 + self.m12 * o.m22,
            self.m21 * o.m11 + self.m22 * o.m21,
            self.m21 * o.m12 + self.m22 * o.m22,
        )
    }

    #[inline]
    pub fn transpose(&self) -> Matrix2 {
        Matrix2::new(self.m11, self.m21, self.m12, self.m22)
    }

    #[inline]
    pub fn scale(&self, k: f64) -> Matrix2 {
        Matrix2::new(k * self.m11, k * self.m12, k * self.m21, k * self.m22)
    }

    #[inline]
    pub fn add(&self, o: &Matrix2) -> Matrix2 {
        Matrix2::new(
            self.m11 + o.m11,
            self.m12 + o.m12,
            self.m21 + o.m21,
            self.m22 + o.m22,
        )
    }

    #[inline]
    pub fn sub(&self, o: &Matrix2) -> Matrix2 {
        self.add(&o.scale(-1.0))
    }

    #[inline]
    pub fn det(&self) -> f64 {
        self.m11 * self.m22 - self.m12 * self.m21
    }

    pub fn inverse(&self) -> Option<Matrix2> {
        let det = self.det();
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        if det == 0.0 || !det.is_finite() || det.abs() <= 1e-300 * scale * scale {
            return None;
        }
        Some(Matrix2::new(
            self.m22 / det,
            -self.m12 / det,
            -self.m21 / det,
            self.m11 / det,
        ))
    }

    pub fn max_abs(&self) -> f64 {
        self.m11
            .abs()
            .max(self.m12.abs())
            .max(self.m21.abs())
            .max(self.m22.abs())
    }

    /// Maximum absolute row sum (the ∞-operator norm).
    pub fn row_sum_norm(&self) -> f64 {
        (self.m11.abs() + self.m12.abs()).max(self.m21.abs() + self.m22.abs())
    }

    pub fn symmetric_part(&self) -> Matrix2 {
        let off = 0.5 * (self.m12 + self.m21);
        Matrix2::new(self.m11, off, off, self.m22)
    }

    /// Eigenvalues `(min, max)` of the symmetric part, closed form.
    pub fn symmetric_eigenvalues(&self) -> (f64, f64) {
        let s = self.symmetric_part();
        let mean = 0.5 * (s.m11 + s.m22);
        let half_gap = (0.5 * (s.m11 - s.m22)).hypot(s.m12);
        (mean - half_gap, mean + half_gap)
    }

    /// Unit eigenvector of the symmetric part belonging to its smallest eigenvalue.
    pub fn symmetric_min_direction(&self) -> SpeciesPair {
        let s = self.symmetric_part();
        let theta = 0.5 * (2.0 * s.m12).atan2(s.m11 - s.m22);
        // theta points at the largest eigenvector; rotate a quarter turn.
        SpeciesPair::new(-theta.sin(), theta.cos())
    }

    /// Operator 2-norm: largest singular value from the eigenvalues of MᵀM.
    pub fn op_norm(&self) -> f64 {
        let a = self.m11 * self.m11 + self.m21 * self.m21;
        let d = self.m12 * self.m12 + self.m22 * self.m22;
        let b = self.m11 * self.m12 + self.m21 * self.m22;
        let mean = 0.5 * (a + d);
        let half_gap = (0.5 * (a - d)).hypot(b);
        (mean + half_gap).max(0.0).sqrt()
    }

    /// Operator 2-norm of the inverse, `σ_max / |det|`.
    pub fn inverse_op_norm(&self) -> Option<f64> {
        self.inverse()?;
        Some(self.op_norm() / self.det().abs())
    }
}

/// Outcome of the two coefficient conditions, evaluated with strict inequalities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionReport {
    /// `0 < a12·a21 < 64·a11·a22`
    pub holds_1_5c: bool,
    /// `0 < a12² < 8·a11·a21` and `0 < a21² < 8·a22·a12`
    pub holds_coef_cond: bool,
    /// `64·a11·a22 − a12·a21`
    pub margin_1_5c: f64,
    /// `(8·a11·a21 − a12², 8·a22·a12 − a21²)`
    pub margins_coef_cond: (f64, f64),
}

pub fn eval_p(c: &Coefficients, s: SpeciesPair) -> Result<SpeciesPair> {
    s.check_finite()?;
    Ok(c.p(s))
}

pub fn eval_q(c: &Coefficients, s: SpeciesPair) -> Result<SpeciesPair> {
    s.check_finite()?;
    Ok(c.q(s))
}

pub fn eval_l(c: &Coefficients, s: SpeciesPair) -> Result<SpeciesPair> {
    s.check_finite()?;
    Ok(c.l(s))
}

pub fn jac_p(c: &Coefficients, s: SpeciesPair) -> Result<Matrix2> {
    s.check_finite()?;
    Ok(c.jac_p(s))
}

pub fn jac_q(c: &Coefficients, s: SpeciesPair) -> Result<Matrix2> {
    s.check_finite()?;
    Ok(c.jac_q(s))
}

pub fn check_conditions(c: &Coefficients) -> ConditionReport {
    let cross = c.a12 * c.a21;
    let bound_1_5c = 64.0 * c.a11 * c.a22;
    let first = c.a12 * c.a12;
    let first_bound = 8.0 * c.a11 * c.a21;
    let second = c.a21 * c.a21;
    let second_bound = 8.0 * c.a22 * c.a12;
    ConditionReport {
        holds_1_5c: 0.0 < cross && cross < bound_1_5c,
        holds_coef_cond: 0.0 < first
            && first < first_bound
            && 0.0 < second
            && second < second_bound,
        margin_1_5c: bound_1_5c - cross,
        margins_coef_cond: (first_bound - first, second_bound - second),
    }
}

/// `(P(s)ξ)·ξ − d0|ξ|² − α(u+v)|ξ|²`; nonnegative values certify the
/// positivity bound at this sample.
pub fn quad_form_margin(c: &Coefficients, s: SpeciesPair, xi: SpeciesPair) -> Result<f64> {
    s.check_nonnegative()?;
    xi.check_finite()?;
    Ok(margin_unchecked(c, c.alpha, s, xi))
}

#[inline]
fn margin_unchecked(c: &Coefficients, alpha: f64, s: SpeciesPair, xi: SpeciesPair) -> f64 {
    let xi2 = xi.norm_sq();
    c.jac_p(s).mul_vec(xi).dot(xi) - c.d0() * xi2 - alpha * (s.u + s.v) * xi2
}

/// Upper end of the sampled state box used by [`max_alpha`].
pub const ALPHA_STATE_MAX: f64 = 100.0;
/// Default number of state/direction pairs used by [`max_alpha`].
pub const ALPHA_SAMPLE_BUDGET: usize = 4096;

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653_3;
// Plastic-number Kronecker sequence for the state box.
const R2_A1: f64 = 0.754_877_666_246_692_7;
const R2_A2: f64 = 0.569_840_290_998_053_2;

/// Largest α for which the positivity margin stays nonnegative on a
/// deterministic sample of states in `[0, ALPHA_STATE_MAX]²` and unit
/// directions, found by bisection to relative width 1e−6.
///
/// States are the three nonzero corners of the box followed by a
/// low-discrepancy sequence; directions are a golden-angle sweep plus, at
/// every state, the minimizing direction of the symmetric part of `P`. The
/// returned value is the lower end of the final bracket, so every sample is
/// certified at the returned α. When all four cross/self coefficients are
/// positive the search never exceeds `min(a11, a12, a21, a22)`.
pub fn max_alpha(c: &Coefficients, sample_budget: usize) -> Result<f64> {
    let report = check_conditions(c);
    if !report.holds_coef_cond {
        return Err(SktError::Condition(format!(
            "max_alpha requires 0 < a12² < 8·a11·a21 and 0 < a21² < 8·a22·a12 \
             (margins {:?})",
            report.margins_coef_cond
        )));
    }
    let budget = sample_budget.max(16);
    let n_states = ((budget as f64).sqrt().round() as usize).max(4);
    let n_dirs = (budget / n_states).max(4);

    let mut states = vec![
        SpeciesPair::new(ALPHA_STATE_MAX, 0.0),
        SpeciesPair::new(0.0, ALPHA_STATE_MAX),
        SpeciesPair::new(ALPHA_STATE_MAX, ALPHA_STATE_MAX),
    ];
    for k in 1..=n_states.saturating_sub(3) {
        let x = (0.5 + R2_A1 * k as f64).fract();
        let y = (0.5 + R2_A2 * k as f64).fract();
        states.push(SpeciesPair::new(ALPHA_STATE_MAX * x, ALPHA_STATE_MAX * y));
    }
    let directions: Vec<SpeciesPair> = (0..n_dirs)
        .map(|k| {
            let theta = (GOLDEN_ANGLE * k as f64) % std::f64::consts::PI;
            SpeciesPair::new(theta.cos(), theta.sin())
        })
        .collect();

    let mut samples = Vec::with_capacity(states.len() * (n_dirs + 1));
    for &s in &states {
        if s.u + s.v <= 0.0 {
            continue;
        }
        for &xi in &directions {
            samples.push((s, xi));
        }
        samples.push((s, c.jac_p(s).symmetric_min_direction()));
    }

    let certified = |alpha: f64| {
        samples
            .iter()
            .all(|&(s, xi)| margin_unchecked(c, alpha, s, xi) >= 0.0)
    };

    let cross_min = c.a11.min(c.a12).min(c.a21).min(c.a22);
    let mut hi = if cross_min > 0.0 {
        cross_min
    } else {
        2.0 * c.a11.max(c.a12).max(c.a21).max(c.a22)
            + (c.d1.max(c.d2) - c.d0()) / ALPHA_STATE_MAX
            + 1.0
    };
    let mut lo = 0.0;
    if certified(hi) {
        // Only reachable through the clamp; step just below it.
        lo = hi * (1.0 - 1e-6);
    }
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if certified(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo <= 0.0 {
        return Err(SktError::Condition(
            "no positive alpha certified on the sample".to_string(),
        ));
    }
    Ok(lo)
}

/// `(|P(s)⁻¹|₂, 1/(d0 + α(u+v)))`; the first should not exceed the second.
pub fn inverse_norm_check(c: &Coefficients, s: SpeciesPair) -> Result<(f64, f64)> {
    s.check_nonnegative()?;
    if !check_conditions(c).holds_coef_cond {
        return Err(SktError::Condition(
            "inverse bound requires the coefficient condition".to_string(),
        ));
    }
    let p = c.jac_p(s);
    let norm = p
        .inverse_op_norm()
        .ok_or_else(|| SktError::Singular(format!("P({}, {}) = {:?}", s.u, s.v, p)))?;
    let denom = c.d0() + c.alpha * (s.u + s.v);
    let bound = if denom > 0.0 {
        1.0 / denom
    } else {
        f64::INFINITY
    };
    Ok((norm, bound))
}

/// `(p(s1) − p(s2), P((s1+s2)/2)·(s1 − s2))`, equal for quadratic `p`.
pub fn mean_value_p(
    c: &Coefficients,
    s1: SpeciesPair,
    s2: SpeciesPair,
) -> Result<(SpeciesPair, SpeciesPair)> {
    s1.check_finite()?;
    s2.check_finite()?;
    let mid = 0.5 * (s1 + s2);
    Ok((c.p(s1) - c.p(s2), c.jac_p(mid).mul_vec(s1 - s2)))
}

/// `(q(s1) − q(s2), Q((s1+s2)/2)·(s1 − s2))`.
pub fn mean_value_q(
    c: &Coefficients,
    s1: SpeciesPair,
    s2: SpeciesPair,
) -> Result<(SpeciesPair, SpeciesPair)> {
    s1.check_finite()?;
    s2.check_finite()?;
    let mid = 0.5 * (s1 + s2);
    Ok((c.q(s1) - c.q(s2), c.jac_q(mid).mul_vec(s1 - s2)))
}

/// Lebesgue exponent `max(2d/(6−d), 4d/(d+2))` controlling continuous
/// dependence on the initial data.
pub fn dual_exponent(d: usize) -> Result<f64> {
    if !(1..=4).contains(&d) {
        return Err(SktError::Domain(format!("dimension {d} outside 1..=4")));
    }
    let d = d as f64;
    Ok((2.0 * d / (6.0 - d)).max(4.0 * d / (d + 2.0)))
}

//! Two-branch interval maps with an indifferent fixed point at the origin.
//!
//! A map in the class `M(α, c, C, C₃, d)` has a first branch on `[0, d̄)`
//! fixing the origin with `T'(0) = 1`, and a second branch on `[d̄, 1]`;
//! both are increasing and onto. Branches are stored as small analytic
//! expression trees so that values, first and second derivatives are exact.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid;

/// Default residual tolerance of [`IntermittentMap::inverse`].
pub const INVERSE_TOL: f64 = 1e-12;

const BISECTION_CAP: usize = 200;

/// Class constants of a map.
///
/// `alpha_bar`, `c_bar` and `c_big_bar` are the constants actually attained
/// by the map in the derivative expansion; they default to `alpha`, `c`
/// and `c_big`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MapParams {
    pub alpha: f64,
    pub c: f64,
    pub c_big: f64,
    pub c3: f64,
    pub d: f64,
    pub d_bar: f64,
    pub gamma0: Option<f64>,
    pub alpha_bar: f64,
    pub c_bar: f64,
    pub c_big_bar: f64,
}

impl MapParams {
    pub fn new(alpha: f64, c: f64, c_big: f64, c3: f64, d: f64, d_bar: f64) -> Result<Self> {
        let p = Self {
            alpha,
            c,
            c_big,
            c3,
            d,
            d_bar,
            gamma0: None,
            alpha_bar: alpha,
            c_bar: c,
            c_big_bar: c_big,
        };
        p.validate()?;
        Ok(p)
    }

    /// Supply tighter expansion constants (`ᾱ ≤ α`, `c̄ ≤ c`, `C̄ ≤ C`).
    pub fn with_bars(mut self, alpha_bar: f64, c_bar: f64, c_big_bar: f64) -> Result<Self> {
        self.alpha_bar = alpha_bar;
        self.c_bar = c_bar;
        self.c_big_bar = c_big_bar;
        self.validate()?;
        Ok(self)
    }

    /// Lower bound on the invariant density. Stored only.
    pub fn with_gamma0(mut self, gamma0: f64) -> Result<Self> {
        self.gamma0 = Some(gamma0);
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0,1)");
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return bad("c must be positive");
        }
        if !(self.c_big >= 1.0) || !self.c_big.is_finite() {
            return bad("C must be at least 1");
        }
        if !(self.c3 > 0.0) || !self.c3.is_finite() {
            return bad("C3 must be positive");
        }
        // d = d_bar is admitted: the canonical LSV map uses d = d_bar = 1/2.
        if !(self.d > 0.0 && self.d <= self.d_bar && self.d_bar < 1.0) {
            return bad("need 0 < d <= d_bar < 1");
        }
        if let Some(g) = self.gamma0 {
            if !(g > 0.0 && g < 1.0) {
                return bad("gamma0 must lie in (0,1)");
            }
        }
        if !(self.alpha_bar > 0.0 && self.alpha_bar <= self.alpha) {
            return bad("need 0 < alpha_bar <= alpha");
        }
        if !(self.c_bar > 0.0 && self.c_bar <= self.c * (1.0 + 1e-12)) {
            return bad("need 0 < c_bar <= c");
        }
        if !(self.c_big_bar > 0.0 && self.c_big_bar <= self.c_big * (1.0 + 1e-12)) {
            return bad("need 0 < C_bar <= C");
        }
        Ok(())
    }
}

/// Additive perturbation profiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bump {
    /// `(x - left)(1 - x)`: vanishes at both ends of the second branch.
    Quadratic { left: f64 },
    /// `x^{1+α}(right - x)`: vanishes at 0 and at the branch point, and is
    /// `O(x^{1+α})` near the fixed point.
    WeightedCubic { alpha: f64, right: f64 },
}

impl Bump {
    fn value(&self, x: f64) -> f64 {
        match *self {
            Bump::Quadratic { left } => (x - left) * (1.0 - x),
            Bump::WeightedCubic { alpha, right } => x.powf(1.0 + alpha) * (right - x),
        }
    }

    fn d1(&self, x: f64) -> f64 {
        match *self {
            Bump::Quadratic { left } => 1.0 + left - 2.0 * x,
            Bump::WeightedCubic { alpha, right } => {
                right * (1.0 + alpha) * x.powf(alpha) - (2.0 + alpha) * x.powf(1.0 + alpha)
            }
        }
    }

    fn d2(&self, x: f64) -> f64 {
        match *self {
            Bump::Quadratic { .. } => -2.0,
            Bump::WeightedCubic { alpha, right } => {
                right * (1.0 + alpha) * alpha * x.powf(alpha - 1.0)
                    - (2.0 + alpha) * (1.0 + alpha) * x.powf(alpha)
            }
        }
    }
}

/// Analytic branch expression.
#[derive(Debug, Clone, PartialEq)]
pub enum BranchFn {
    /// `x (1 + 2^α x^α)`.
    Lsv { alpha: f64 },
    /// `slope·x + offset`.
    Affine { slope: f64, offset: f64 },
    /// `base(x) + amplitude·bump(x)`.
    Bumped {
        base: Box<BranchFn>,
        bump: Bump,
        amplitude: f64,
    },
}

impl BranchFn {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            BranchFn::Affine { slope, offset } => slope * x + offset,
            _ => x + self.displacement(x),
        }
    }

    /// `T(x) - x`, evaluated without cancellation near the fixed point.
    pub fn displacement(&self, x: f64) -> f64 {
        match self {
            BranchFn::Lsv { alpha } => 2f64.powf(*alpha) * x.powf(1.0 + alpha),
            BranchFn::Affine { slope, offset } => (slope - 1.0) * x + offset,
            BranchFn::Bumped {
                base,
                bump,
                amplitude,
            } => base.displacement(x) + amplitude * bump.value(x),
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        match self {
            BranchFn::Lsv { alpha } => 1.0 + 2f64.powf(*alpha) * (1.0 + alpha) * x.powf(*alpha),
            BranchFn::Affine { slope, .. } => *slope,
            BranchFn::Bumped {
                base,
                bump,
                amplitude,
            } => base.d1(x) + amplitude * bump.d1(x),
        }
    }

    /// `T'(x) - 1`, evaluated without cancellation near the fixed point.
    pub fn d1_excess(&self, x: f64) -> f64 {
        match self {
            BranchFn::Lsv { alpha } => 2f64.powf(*alpha) * (1.0 + alpha) * x.powf(*alpha),
            BranchFn::Affine { slope, .. } => slope - 1.0,
            BranchFn::Bumped {
                base,
                bump,
                amplitude,
            } => base.d1_excess(x) + amplitude * bump.d1(x),
        }
    }

    pub fn d2(&self, x: f64) -> f64 {
        match self {
            BranchFn::Lsv { alpha } => {
                2f64.powf(*alpha) * (1.0 + alpha) * alpha * x.powf(alpha - 1.0)
            }
            BranchFn::Affine { .. } => 0.0,
            BranchFn::Bumped {
                base,
                bump,
                amplitude,
            } => base.d2(x) + amplitude * bump.d2(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Branch {
    First,
    Second,
}

impl Branch {
    pub const BOTH: [Branch; 2] = [Branch::First, Branch::Second];

    pub fn index(self) -> usize {
        match self {
            Branch::First => 0,
            Branch::Second => 1,
        }
    }

    /// Branch from its 1-based number.
    pub fn from_number(i: usize) -> Result<Self> {
        match i {
            1 => Ok(Branch::First),
            2 => Ok(Branch::Second),
            _ => Err(Error::InvalidParameter(format!("branch index {i} not in {{1,2}}"))),
        }
    }
}

/// A two-branch map of the unit interval. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct IntermittentMap {
    pub params: MapParams,
    branches: [BranchFn; 2],
    pub label: String,
}

impl IntermittentMap {
    pub fn new(params: MapParams, first: BranchFn, second: BranchFn, label: impl Into<String>) -> Self {
        Self {
            params,
            branches: [first, second],
            label: label.into(),
        }
    }

    pub fn branch(&self, b: Branch) -> &BranchFn {
        &self.branches[b.index()]
    }

    pub fn d_bar(&self) -> f64 {
        self.params.d_bar
    }

    /// Closed domain of a branch.
    pub fn domain(&self, b: Branch) -> (f64, f64) {
        match b {
            Branch::First => (0.0, self.params.d_bar),
            Branch::Second => (self.params.d_bar, 1.0),
        }
    }

    /// Branch owning `x`; the branch point belongs to the second branch.
    pub fn branch_of(&self, x: f64) -> Branch {
        if x < self.params.d_bar {
            Branch::First
        } else {
            Branch::Second
        }
    }

    fn check_domain(x: f64) -> Result<()> {
        if (0.0..=1.0).contains(&x) {
            Ok(())
        } else {
            Err(Error::Domain {
                x,
                domain: "[0,1]",
            })
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        Self::check_domain(x)?;
        Ok(self.branch(self.branch_of(x)).value(x).clamp(0.0, 1.0))
    }

    /// One-sided branch derivative.
    pub fn derivative(&self, x: f64) -> Result<f64> {
        Self::check_domain(x)?;
        Ok(self.branch(self.branch_of(x)).d1(x))
    }

    pub fn second_derivative(&self, x: f64) -> Result<f64> {
        Self::check_domain(x)?;
        if x == 0.0 || x == self.params.d_bar {
            return Err(Error::Discontinuity(x));
        }
        Ok(self.branch(self.branch_of(x)).d2(x))
    }

    fn has_indifferent_origin(&self) -> bool {
        (self.branches[0].d1(0.0) - 1.0).abs() <= 1e-12
    }

    /// Solve `T_b(x) = y` on the domain of branch `b`.
    ///
    /// Bisection to full floating-point resolution (at most 200 halvings),
    /// followed by one Newton step. The result satisfies `|T_b(x) - y| <= tol`.
    pub fn inverse(&self, b: Branch, y: f64, tol: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::Domain {
                x: y,
                domain: "[0,1]",
            });
        }
        let (lo0, hi0) = self.domain(b);
        if y == 0.0 {
            return Ok(lo0);
        }
        if y == 1.0 {
            return Ok(hi0);
        }
        let f = self.branch(b);
        let p = &self.params;
        if b == Branch::First
            && self.has_indifferent_origin()
            && p.c_bar * y.powf(p.alpha_bar) < f64::EPSILON
        {
            // T(x) = x to working precision; use the expansion of the inverse.
            return Ok(y - p.c_bar / (p.alpha_bar + 1.0) * y.powf(1.0 + p.alpha_bar));
        }

        let g = |x: f64| f.value(x) - y;
        let (glo, ghi) = (g(lo0), g(hi0));
        if glo > tol || ghi < -tol {
            return Err(Error::MalformedBranch {
                branch: b.index() + 1,
                reason: format!("no bracket for y={y}: T(lo)-y={glo:e}, T(hi)-y={ghi:e}"),
            });
        }
        let (mut lo, mut hi) = (lo0, hi0);
        for _ in 0..BISECTION_CAP {
            let mid = lo + 0.5 * (hi - lo);
            if mid <= lo || mid >= hi {
                break;
            }
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut x = if g(lo).abs() <= g(hi).abs() { lo } else { hi };
        let slope = f.d1(x);
        if slope.is_finite() && slope > 0.0 {
            let candidate = x - g(x) / slope;
            if (lo0..=hi0).contains(&candidate) && g(candidate).abs() < g(x).abs() {
                x = candidate;
            }
        }
        let residual = g(x).abs();
        if residual > tol || !x.is_finite() {
            return Err(Error::InverseNotConverged {
                branch: b.index() + 1,
                y,
                residual,
            });
        }
        Ok(x)
    }

    /// The canonical map `x(1 + 2^α x^α)` on `[0,1/2)`, `2x - 1` on `[1/2,1]`.
    pub fn lsv(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha={alpha} must lie in (0,1)"
            )));
        }
        let k = 2f64.powf(alpha);
        let c = k * (1.0 + alpha);
        // sup|T'| = T'(1/2^-) = 2 + α; sup |T''| x^{1-α} = 2^α (1+α) α.
        let c_big = (2.0 + alpha).max(c * alpha).max(1.0);
        let params = MapParams::new(alpha, c, c_big, k, 0.5, 0.5)?;
        Ok(Self::new(
            params,
            BranchFn::Lsv { alpha },
            BranchFn::Affine {
                slope: 2.0,
                offset: -1.0,
            },
            format!("lsv(alpha={alpha})"),
        ))
    }

    /// `2x mod 1`. Not in the class (`T'(0) = 2`); admitted for oracle tests.
    /// `alpha` only sets the weight of the norms used with this map.
    pub fn doubling(alpha: f64) -> Result<Self> {
        let params = MapParams::new(alpha, 1.0, 2.0, 1.0, 0.5, 0.5)?;
        Ok(Self::new(
            params,
            BranchFn::Affine {
                slope: 2.0,
                offset: 0.0,
            },
            BranchFn::Affine {
                slope: 2.0,
                offset: -1.0,
            },
            "doubling",
        ))
    }
}

/// Class conditions checked by [`check_membership`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Condition {
    FixedPoint,
    IndifferentFixedPoint,
    Onto,
    Monotone,
    Expanding,
    DerivativeBound,
    SecondDerivativeBound,
    DriftLowerBound,
    LeadingOrderExpansion,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionCheck {
    pub condition: Condition,
    pub passed: bool,
    /// Worst-case margin; negative values quantify the violation.
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MembershipReport {
    pub checks: Vec<ConditionCheck>,
    pub grid_size: usize,
}

impl MembershipReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, condition: Condition) -> &ConditionCheck {
        self.checks
            .iter()
            .find(|c| c.condition == condition)
            .expect("every condition is checked")
    }

    pub fn failures(&self) -> Vec<Condition> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.condition)
            .collect()
    }
}

/// Threshold for the remainder ratio of the leading-order derivative expansion.
pub const EXPANSION_THRESHOLD: f64 = 0.1;

/// Check the class conditions on a grid accumulating at the origin.
///
/// The little-o clause of the derivative expansion is checked as a trend:
/// the remainder ratio `|T'(x) - 1 - c̄x^ᾱ| / x^ᾱ` sampled at the three
/// smallest decades must not increase towards 0 and must be at most
/// [`EXPANSION_THRESHOLD`] at the smallest one.
pub fn check_membership(t: &IntermittentMap, grid_size: usize, tol: f64) -> Result<MembershipReport> {
    if grid_size < 16 {
        return Err(Error::InvalidParameter(format!(
            "grid_size={grid_size} must be at least 16"
        )));
    }
    let p = &t.params;
    let samples = grid::branch_samples(p.d_bar, grid_size);
    let b1 = t.branch(Branch::First);
    let b2 = t.branch(Branch::Second);
    let mut checks = Vec::new();
    let mut push = |condition, passed: bool, margin: f64| {
        checks.push(ConditionCheck {
            condition,
            passed,
            margin,
        })
    };

    let m = tol - b1.value(0.0).abs();
    push(Condition::FixedPoint, m >= 0.0, m);

    let m = tol - (b1.d1(0.0) - 1.0).abs();
    push(Condition::IndifferentFixedPoint, m >= 0.0, m);

    let onto_err = [
        b1.value(0.0).abs(),
        (b1.value(p.d_bar) - 1.0).abs(),
        b2.value(p.d_bar).abs(),
        (b2.value(1.0) - 1.0).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    let m = tol - onto_err;
    push(Condition::Onto, m >= 0.0, m);

    let mut mono = f64::INFINITY;
    let mut expanding = f64::INFINITY;
    let mut deriv = f64::INFINITY;
    let mut second = f64::INFINITY;
    for (b, xs) in Branch::BOTH.iter().zip(samples.iter()) {
        let f = t.branch(*b);
        let mut prev = match b {
            Branch::First => Some((0.0, f.value(0.0))),
            Branch::Second => None,
        };
        for &x in xs {
            let v = f.value(x);
            if let Some((px, pv)) = prev {
                if x > px {
                    mono = mono.min(v - pv);
                }
            }
            prev = Some((x, v));
            let d1 = f.d1(x);
            // T' > 1 is required off the fixed point and off the branch point
            // approached from the left.
            if !(b == &Branch::First && x == p.d_bar) {
                expanding = expanding.min(f.d1_excess(x));
            }
            deriv = deriv.min((p.c_big_bar - d1.abs()) / p.c_big_bar);
            let w = p.c_big_bar * x.powf(p.alpha_bar - 1.0);
            second = second.min((w - f.d2(x).abs()) / w);
        }
    }
    push(Condition::Monotone, mono > 0.0, mono);
    push(Condition::Expanding, expanding > 0.0, expanding);
    push(Condition::DerivativeBound, deriv >= -tol, deriv);
    push(Condition::SecondDerivativeBound, second >= -tol, second);

    let drift = samples[0]
        .iter()
        .map(|&x| (b1.displacement(x) / x.powf(1.0 + p.alpha) - p.c3) / p.c3)
        .fold(f64::INFINITY, f64::min);
    push(Condition::DriftLowerBound, drift >= -tol, drift);

    let ratios: Vec<f64> = [1e-10, 1e-11, 1e-12]
        .iter()
        .map(|&x: &f64| {
            let xa = x.powf(p.alpha_bar);
            (b1.d1_excess(x) - p.c_bar * xa).abs() / xa
        })
        .collect();
    let trend = ratios.windows(2).all(|w| w[1] <= w[0] + 1e-9);
    let m = EXPANSION_THRESHOLD - ratios[2];
    push(Condition::LeadingOrderExpansion, trend && m >= 0.0, m);

    Ok(MembershipReport { checks, grid_size })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum FamilyKind {
    SecondBranchBump,
    FirstBranchWeightedBump,
}

impl FamilyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FamilyKind::SecondBranchBump => "second_branch_bump",
            FamilyKind::FirstBranchWeightedBump => "first_branch_weighted_bump",
        }
    }
}

impl FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "second_branch_bump" => Ok(FamilyKind::SecondBranchBump),
            "first_branch_weighted_bump" => Ok(FamilyKind::FirstBranchWeightedBump),
            other => Err(Error::Config(format!("unknown family '{other}'"))),
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One-parameter family `T_s`, `s ∈ [0,1)`, sharing the class constants
/// of its base map.
#[derive(Debug, Clone)]
pub struct PerturbationFamily {
    pub base: IntermittentMap,
    pub kind: FamilyKind,
    pub scale: f64,
    /// Class constants shared by every member.
    pub params: MapParams,
}

impl PerturbationFamily {
    /// Member for parameter `s`. `s = 0` returns the base branches unchanged.
    pub fn generate(&self, s: f64) -> Result<IntermittentMap> {
        if !(0.0..1.0).contains(&s) {
            return Err(Error::InvalidParameter(format!("s={s} must lie in [0,1)")));
        }
        Ok(self.member(s))
    }

    fn member(&self, s: f64) -> IntermittentMap {
        let mut params = self.params;
        params.c_bar = self.leading_coefficient(s);
        let label = format!("{}+{}(s={s},scale={})", self.base.label, self.kind, self.scale);
        let amplitude = s * self.scale;
        let b1 = self.base.branch(Branch::First).clone();
        let b2 = self.base.branch(Branch::Second).clone();
        if s == 0.0 {
            return IntermittentMap::new(params, b1, b2, label);
        }
        let d_bar = self.params.d_bar;
        match self.kind {
            FamilyKind::SecondBranchBump => IntermittentMap::new(
                params,
                b1,
                BranchFn::Bumped {
                    base: Box::new(b2),
                    bump: Bump::Quadratic { left: d_bar },
                    amplitude,
                },
                label,
            ),
            FamilyKind::FirstBranchWeightedBump => IntermittentMap::new(
                params,
                BranchFn::Bumped {
                    base: Box::new(b1),
                    bump: Bump::WeightedCubic {
                        alpha: self.params.alpha,
                        right: d_bar,
                    },
                    amplitude,
                },
                b2,
                label,
            ),
        }
    }

    /// c̄ of the member with parameter `s`.
    fn leading_coefficient(&self, s: f64) -> f64 {
        let base = self.base.params;
        match self.kind {
            FamilyKind::FirstBranchWeightedBump if base.alpha_bar == base.alpha => {
                base.c_bar + s * self.scale * (1.0 + base.alpha) * base.d_bar
            }
            _ => base.c_bar,
        }
    }
}

/// Build a perturbation family around `base`.
///
/// The second-branch bump is `s·scale·(x - d̄)(1 - x)` on `[d̄, 1]`; the
/// first-branch bump is `s·scale·x^{1+α}(d̄ - x)` on `[0, d̄)`. Both keep the
/// branch endpoints fixed. The extreme member `s → 1` is checked against the
/// shared class constants.
pub fn make_perturbed_family(base: &IntermittentMap, kind: FamilyKind, scale: f64) -> Result<PerturbationFamily> {
    if !scale.is_finite() {
        return Err(Error::InvalidParameter("scale must be finite".into()));
    }
    let report = check_membership(base, grid::DEFAULT_GRID_SIZE, 1e-9)?;
    if !report.passed() {
        return Err(Error::LeavesClass(format!(
            "base map {} fails {:?}",
            base.label,
            report.failures()
        )));
    }
    let mut family = PerturbationFamily {
        base: base.clone(),
        kind,
        scale,
        params: base.params,
    };
    let c_extreme = family.leading_coefficient(1.0);
    family.params.c = base.params.c.max(c_extreme);
    let extreme = family.member(1.0);
    let report = check_membership(&extreme, grid::DEFAULT_GRID_SIZE, 1e-9)?;
    if !report.passed() {
        return Err(Error::LeavesClass(format!(
            "scale={scale} pushes {} out of the class: {:?}",
            extreme.label,
            report.failures()
        )));
    }
    Ok(family)
}

/// Sizes of a deterministic perturbation in the weighted inverse-branch
/// distance (`eps_n1`) and the derivative sup distance (`eps_n2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerturbationSize {
    pub eps_n1: f64,
    pub eps_n2: f64,
    pub eps: f64,
    /// `eps_n1` restricted to each branch.
    pub eps_n1_by_branch: [f64; 2],
    pub grid_size: usize,
}

/// Grid suprema of `y^{-α-1}|T₀ᵢ⁻¹(y) - Tₛᵢ⁻¹(y)|` and `|T₀'(x) - Tₛ'(x)|`.
///
/// The inverse-branch gap is taken to first order in the perturbation,
/// `|T₁(x) - T₀(x)| / |T'(x)|`, averaged over the two preimages. For a
/// perturbation that moves the second branch near the branch point the
/// weighted gap grows like `y^{-α}` as `y → 0`, and the value is set by
/// the grid floor [`grid::GEOMETRIC_FLOOR`].
pub fn perturbation_size(t0: &IntermittentMap, ts: &IntermittentMap, grid_size: usize) -> Result<PerturbationSize> {
    if t0.params.d_bar != ts.params.d_bar || t0.params.alpha != ts.params.alpha {
        return Err(Error::InvalidParameter(
            "maps must share alpha and the branch point".into(),
        ));
    }
    let alpha = t0.params.alpha;
    let ys = grid::supremum_grid(t0.params.d_bar, grid_size);
    let mut by_branch = [0.0f64; 2];
    for b in Branch::BOTH {
        let (f0, f1) = (t0.branch(b), ts.branch(b));
        let mut sup = 0.0f64;
        for &y in &ys {
            // |x₀ - x₁| to first order, from the value gap at each preimage;
            // subtracting the preimages directly cancels near the branch point
            let x0 = t0.inverse(b, y, INVERSE_TOL)?;
            let x1 = ts.inverse(b, y, INVERSE_TOL)?;
            let gap0 = (f1.value(x0) - f0.value(x0)).abs() / f1.d1(x0).abs();
            let gap1 = (f0.value(x1) - f1.value(x1)).abs() / f0.d1(x1).abs();
            sup = sup.max(0.5 * (gap0 + gap1) * y.powf(-alpha - 1.0));
        }
        by_branch[b.index()] = sup;
    }
    let samples = grid::branch_samples(t0.params.d_bar, grid_size);
    let mut eps_n2 = 0.0f64;
    for b in Branch::BOTH {
        let (f0, f1) = (t0.branch(b), ts.branch(b));
        let mut pts = samples[b.index()].clone();
        if b == Branch::First {
            pts.push(0.0);
        }
        for x in pts {
            eps_n2 = eps_n2.max((f0.d1(x) - f1.d1(x)).abs());
        }
    }
    let eps_n1 = by_branch[0].max(by_branch[1]);
    Ok(PerturbationSize {
        eps_n1,
        eps_n2,
        eps: eps_n1.max(eps_n2),
        eps_n1_by_branch: by_branch,
        grid_size,
    })
}

/// Base map of a textual description.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseKind {
    Lsv,
    Doubling,
}

impl BaseKind {
    fn as_str(self) -> &'static str {
        match self {
            BaseKind::Lsv => "lsv",
            BaseKind::Doubling => "doubling",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "lsv" => Ok(BaseKind::Lsv),
            "doubling" => Ok(BaseKind::Doubling),
            other => Err(Error::Config(format!("unknown map kind '{other}'"))),
        }
    }
}

/// Textual map description: `kind=lsv alpha=0.5`, or
/// `kind=perturbed base=lsv alpha=0.5 family=second_branch_bump s=0.05 scale=0.5`.
#[derive(Debug, Clone, PartialEq)]
pub enum MapDescription {
    Base { kind: BaseKind, alpha: f64 },
    Perturbed {
        base: BaseKind,
        alpha: f64,
        family: FamilyKind,
        s: f64,
        scale: f64,
    },
}

/// Keys recognised by [`MapDescription::from_pairs`].
pub const MAP_KEYS: [&str; 6] = ["kind", "alpha", "base", "family", "s", "scale"];

fn required<'a>(pairs: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    pairs
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Config(format!("missing key '{key}'")))
}

pub(crate) fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("key '{key}': '{v}' is not a number")))
}

impl MapDescription {
    pub fn alpha(&self) -> f64 {
        match self {
            MapDescription::Base { alpha, .. } | MapDescription::Perturbed { alpha, .. } => *alpha,
        }
    }

    /// Parse from key/value pairs. Keys not in [`MAP_KEYS`] are ignored here;
    /// callers that own the full key set reject them.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let kind = required(pairs, "kind")?;
        let alpha = parse_f64("alpha", required(pairs, "alpha")?)?;
        match kind {
            "perturbed" => {
                let base = BaseKind::parse(required(pairs, "base")?)?;
                let family: FamilyKind = required(pairs, "family")?.parse()?;
                let s = parse_f64("s", required(pairs, "s")?)?;
                let scale = parse_f64("scale", required(pairs, "scale")?)?;
                Ok(MapDescription::Perturbed {
                    base,
                    alpha,
                    family,
                    s,
                    scale,
                })
            }
            other => Ok(MapDescription::Base {
                kind: BaseKind::parse(other)?,
                alpha,
            }),
        }
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        match self {
            MapDescription::Base { kind, alpha } => vec![
                ("kind", kind.as_str().to_string()),
                ("alpha", alpha.to_string()),
            ],
            MapDescription::Perturbed {
                base,
                alpha,
                family,
                s,
                scale,
            } => vec![
                ("kind", "perturbed".to_string()),
                ("base", base.as_str().to_string()),
                ("alpha", alpha.to_string()),
                ("family", family.to_string()),
                ("s", s.to_string()),
                ("scale", scale.to_string()),
            ],
        }
    }

    pub fn build(&self) -> Result<IntermittentMap> {
        let base = |kind: BaseKind, alpha: f64| match kind {
            BaseKind::Lsv => IntermittentMap::lsv(alpha),
            BaseKind::Doubling => IntermittentMap::doubling(alpha),
        };
        match *self {
            MapDescription::Base { kind, alpha } => base(kind, alpha),
            MapDescription::Perturbed {
                base: kind,
                alpha,
                family,
                s,
                scale,
            } => make_perturbed_family(&base(kind, alpha)?, family, scale)?.generate(s),
        }
    }
}

/// Split `key=value` tokens separated by whitespace, commas or newlines;
/// `#` starts a comment.
pub(crate) fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut pairs = BTreeMap::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got '{tok}'")))?;
            if pairs.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key '{k}'")));
            }
        }
    }
    Ok(pairs)
}

impl FromStr for MapDescription {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let pairs = parse_pairs(s)?;
        if let Some(k) = pairs.keys().find(|k| !MAP_KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown key '{k}'")));
        }
        Self::from_pairs(&pairs)
    }
}

impl fmt::Display for MapDescription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        f.write_str(&parts.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lsv() -> IntermittentMap {
        IntermittentMap::lsv(0.5).unwrap()
    }

    #[test]
    fn lsv_rejects_bad_alpha() {
        assert!(IntermittentMap::lsv(0.0).is_err());
        assert!(IntermittentMap::lsv(1.0).is_err());
        assert!(IntermittentMap::lsv(-0.2).is_err());
    }

    #[test]
    fn lsv_values() {
        let t = lsv();
        assert_eq!(t.eval(0.0).unwrap(), 0.0);
        assert_eq!(t.eval(0.75).unwrap(), 0.5);
        assert_eq!(t.eval(0.5).unwrap(), 0.0);
        let x: f64 = 0.25;
        let expected = x * (1.0 + 2f64.sqrt() * x.sqrt());
        assert!((t.eval(0.25).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.426_776_695_296_636_9).abs() < 1e-12);
        // left limit at the branch point
        let below = 0.5 - 1e-12;
        assert!((t.eval(below).unwrap() - 1.0).abs() < 1e-11);
    }

    #[test]
    fn eval_rejects_outside_unit_interval() {
        let t = lsv();
        assert!(matches!(t.eval(1.5), Err(Error::Domain { .. })));
        assert!(t.eval(-1e-3).is_err());
        assert!(t.eval(f64::NAN).is_err());
    }

    #[test]
    fn lsv_derivatives() {
        let t = lsv();
        assert_eq!(t.derivative(0.0).unwrap(), 1.0);
        assert_eq!(t.derivative(0.75).unwrap(), 2.0);
        let d = t.derivative(0.25).unwrap();
        assert!((d - (1.0 + 2f64.sqrt() * 1.5 * 0.5)).abs() < 1e-15);
        assert!((d - 2.06066).abs() < 1e-5);
        let h = 1e-6;
        let fd = (t.eval(0.25 + h).unwrap() - t.eval(0.25 - h).unwrap()) / (2.0 * h);
        assert!((fd - d).abs() < 1e-6);
    }

    #[test]
    fn second_derivative_at_discontinuities_is_an_error() {
        let t = lsv();
        assert!(matches!(t.second_derivative(0.0), Err(Error::Discontinuity(_))));
        assert!(matches!(t.second_derivative(0.5), Err(Error::Discontinuity(_))));
        assert_eq!(t.second_derivative(0.75).unwrap(), 0.0);
        let h = 1e-5;
        let x = 0.2;
        let fd = (t.derivative(x + h).unwrap() - t.derivative(x - h).unwrap()) / (2.0 * h);
        assert!((fd - t.second_derivative(x).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn inverse_branch_examples() {
        let t = lsv();
        assert_eq!(t.inverse(Branch::Second, 0.0, INVERSE_TOL).unwrap(), 0.5);
        assert_eq!(t.inverse(Branch::First, 1.0, INVERSE_TOL).unwrap(), 0.5);
        let y = t.eval(0.25).unwrap();
        let x = t.inverse(Branch::First, y, INVERSE_TOL).unwrap();
        assert!((x - 0.25).abs() < 1e-12);
        let x2 = t.inverse(Branch::Second, 0.3, INVERSE_TOL).unwrap();
        assert!((x2 - 0.65).abs() < 1e-15);
        assert!(t.inverse(Branch::First, 1.2, INVERSE_TOL).is_err());
        assert!(Branch::from_number(3).is_err());
    }

    #[test]
    fn inverse_is_accurate_near_the_fixed_point() {
        let t = lsv();
        for &y in &[1e-12, 1e-20, 1e-40] {
            let x = t.inverse(Branch::First, y, INVERSE_TOL).unwrap();
            let back = t.branch(Branch::First).value(x);
            assert!(((back - y) / y).abs() < 1e-14, "y={y} back={back}");
        }
    }

    #[test]
    fn malformed_branch_is_reported() {
        let p = MapParams::new(0.5, 1.0, 2.0, 1.0, 0.5, 0.5).unwrap();
        // first branch only reaches 0.5: not onto
        let t = IntermittentMap::new(
            p,
            BranchFn::Affine { slope: 1.0, offset: 0.0 },
            BranchFn::Affine { slope: 2.0, offset: -1.0 },
            "bad",
        );
        assert!(matches!(
            t.inverse(Branch::First, 0.9, INVERSE_TOL),
            Err(Error::MalformedBranch { .. })
        ));
    }

    #[test]
    fn lsv_is_in_the_class() {
        for alpha in [0.3, 0.5, 0.7] {
            let t = IntermittentMap::lsv(alpha).unwrap();
            let r = check_membership(&t, 1000, 1e-9).unwrap();
            assert!(r.passed(), "alpha={alpha}: {:?}", r.checks);
        }
    }

    #[test]
    fn too_large_drift_constant_fails() {
        let mut t = lsv();
        t.params.c3 = 10.0;
        let r = check_membership(&t, 1000, 1e-9).unwrap();
        assert!(!r.get(Condition::DriftLowerBound).passed);
        assert!(r.get(Condition::Monotone).passed);
    }

    #[test]
    fn doubling_map_is_not_indifferent() {
        let t = IntermittentMap::doubling(0.5).unwrap();
        let r = check_membership(&t, 100, 1e-9).unwrap();
        assert!(!r.get(Condition::IndifferentFixedPoint).passed);
        assert!(!r.passed());
    }

    #[test]
    fn membership_needs_a_reasonable_grid() {
        assert!(check_membership(&lsv(), 8, 1e-9).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(MapParams::new(0.5, 1.0, 2.0, 1.0, 0.6, 0.5).is_err());
        assert!(MapParams::new(0.5, 1.0, 0.5, 1.0, 0.4, 0.5).is_err());
        assert!(MapParams::new(0.5, 1.0, 2.0, 0.0, 0.4, 0.5).is_err());
        let p = MapParams::new(0.5, 1.0, 2.0, 1.0, 0.4, 0.5).unwrap();
        assert!(p.with_gamma0(1.5).is_err());
        assert!(p.with_gamma0(0.2).is_ok());
        assert!(p.with_bars(0.6, 1.0, 2.0).is_err());
        assert!(p.with_bars(0.4, 0.9, 1.5).is_ok());
    }

    #[test]
    fn family_at_zero_is_base() {
        let t = lsv();
        for kind in [FamilyKind::SecondBranchBump, FamilyKind::FirstBranchWeightedBump] {
            let fam = make_perturbed_family(&t, kind, 0.5).unwrap();
            let t0 = fam.generate(0.0).unwrap();
            for b in Branch::BOTH {
                assert_eq!(t0.branch(b), t.branch(b));
            }
            assert!(fam.generate(1.0).is_err());
        }
    }

    #[test]
    fn second_branch_bump_fixes_endpoints() {
        let t = lsv();
        let fam = make_perturbed_family(&t, FamilyKind::SecondBranchBump, 0.5).unwrap();
        let ts = fam.generate(0.3).unwrap();
        assert_eq!(ts.eval(0.5).unwrap(), 0.0);
        assert_eq!(ts.eval(1.0).unwrap(), 1.0);
        assert!(ts.eval(0.75).unwrap() > t.eval(0.75).unwrap());
        assert_eq!(ts.eval(0.25).unwrap(), t.eval(0.25).unwrap());
    }

    #[test]
    fn oversized_family_is_rejected() {
        let t = lsv();
        let err = make_perturbed_family(&t, FamilyKind::SecondBranchBump, 5.0).unwrap_err();
        assert!(matches!(err, Error::LeavesClass(_)));
    }

    #[test]
    fn first_branch_bump_is_linear_in_s() {
        let t = lsv();
        let fam = make_perturbed_family(&t, FamilyKind::FirstBranchWeightedBump, 0.5).unwrap();
        let e1 = perturbation_size(&t, &fam.generate(0.1).unwrap(), 1000).unwrap();
        let e2 = perturbation_size(&t, &fam.generate(0.2).unwrap(), 1000).unwrap();
        assert!(e1.eps_n1.is_finite() && e1.eps_n1 > 0.0);
        let ratio = e2.eps / e1.eps;
        assert!((ratio - 2.0).abs() < 0.1, "ratio={ratio}");
        // only the first branch moves
        assert_eq!(e1.eps_n1_by_branch[1], 0.0);
    }

    #[test]
    fn perturbation_size_of_identical_maps_is_zero() {
        let t = lsv();
        let e = perturbation_size(&t, &t, 200).unwrap();
        assert_eq!(e.eps, 0.0);
        assert_eq!(e.eps_n1, 0.0);
        assert_eq!(e.eps_n2, 0.0);
    }

    #[test]
    fn perturbation_size_is_monotone_and_grid_stable() {
        let t = lsv();
        for kind in [FamilyKind::SecondBranchBump, FamilyKind::FirstBranchWeightedBump] {
            let fam = make_perturbed_family(&t, kind, 0.5).unwrap();
            let eps: Vec<f64> = (1..=10)
                .map(|k| {
                    let ts = fam.generate(0.01 * k as f64).unwrap();
                    perturbation_size(&t, &ts, 1000).unwrap().eps
                })
                .collect();
            assert!(eps.windows(2).all(|w| w[0] <= w[1]), "{kind}: {eps:?}");
            let ts = fam.generate(0.05).unwrap();
            let coarse = perturbation_size(&t, &ts, 1000).unwrap().eps;
            let fine = perturbation_size(&t, &ts, 2000).unwrap().eps;
            assert!(((fine - coarse) / coarse).abs() < 0.02, "{kind}: {coarse} vs {fine}");
        }
    }

    #[test]
    fn second_branch_size_matches_closed_form() {
        // 2x - 1 + A(x - 1/2)(1 - x) = y has the root 1/2 + 2y/(B + √(B² - 4Ay)),
        // B = 2 + A/2; the gap to (1 + y)/2 is written without cancellation.
        let t = lsv();
        let fam = make_perturbed_family(&t, FamilyKind::SecondBranchBump, 1.0).unwrap();
        for s in [0.01, 0.08] {
            let e = perturbation_size(&t, &fam.generate(s).unwrap(), 1000).unwrap();
            let a = s;
            let b = 2.0 + a / 2.0;
            let oracle = grid::supremum_grid(0.5, 1000)
                .into_iter()
                .map(|y| {
                    let root = (b * b - 4.0 * a * y).sqrt();
                    let gap = y * (a - 4.0 * a * y / (root + b)) / (2.0 * (b + root));
                    gap * y.powf(-1.5)
                })
                .fold(0.0, f64::max);
            // one ulp of the preimage near 1/2 against a gap of order 1e-13
            let rel = (e.eps_n1_by_branch[1] - oracle).abs() / oracle;
            assert!(rel < 2e-3, "s={s}: {} vs {oracle}", e.eps_n1_by_branch[1]);
            assert!((e.eps_n2 - 0.5 * s).abs() < 1e-12);
        }
    }

    #[test]
    fn perturbation_size_is_symmetric_and_linear() {
        let t = lsv();
        let fam = make_perturbed_family(&t, FamilyKind::SecondBranchBump, 1.0).unwrap();
        let (t1, t2) = (fam.generate(0.01).unwrap(), fam.generate(0.02).unwrap());
        let a = perturbation_size(&t, &t1, 500).unwrap();
        let b = perturbation_size(&t1, &t, 500).unwrap();
        assert_eq!(a, b);
        let c = perturbation_size(&t, &t2, 500).unwrap();
        assert!((c.eps / a.eps - 2.0).abs() < 0.01);
    }

    #[test]
    fn description_round_trip() {
        let d: MapDescription = "kind=perturbed base=lsv alpha=0.5 family=second_branch_bump s=0.05 scale=0.5"
            .parse()
            .unwrap();
        let again: MapDescription = d.to_string().parse().unwrap();
        assert_eq!(d, again);
        let t = d.build().unwrap();
        assert!(t.eval(0.75).unwrap() > 0.5);
        let lsv: MapDescription = "kind=lsv, alpha=0.5".parse().unwrap();
        assert_eq!(lsv.build().unwrap().branch(Branch::First), &BranchFn::Lsv { alpha: 0.5 });
        assert!("kind=lsv".parse::<MapDescription>().is_err());
        assert!("kind=lsv alpha=0.5 colour=red".parse::<MapDescription>().is_err());
        assert!("kind=tent alpha=0.5".parse::<MapDescription>().is_err());
    }
}

//! Explicit constants and the Hölder stability bound.
//!
//! Cone constants: `A* = ((1-α)C₃d^{2+α})^{-1}`, `K_T = sup x^{α-1}T(x)`,
//! `c_T = ‖T'‖_∞`, the logarithmic-derivative cone parameters `(a_T, b_T)`
//! and `M = max(A*, A*(a_T + b_T))`.
//!
//! Rate model: `φ(n) = C_φ n^{-a}`, `ψ(x) = φ(x)/x`, and the bound
//! `‖f₁ - f₀‖₁ ≤ 3M ε (ψ⁻¹(ε) + 1)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid;
use crate::map_family::{Branch, IntermittentMap};
use crate::transfer::DecaySeries;

/// Factor realising the strict inequalities of the cone construction.
pub const SAFETY_FACTOR: f64 = 1.01;

/// `((1-α) C₃ d^{2+α})^{-1}`.
pub fn a_star(alpha: f64, c3: f64, d: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0 && c3 > 0.0 && d > 0.0 && d < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "a_star needs 0<alpha<1, C3>0, 0<d<1 (got {alpha}, {c3}, {d})"
        )));
    }
    Ok(d.powf(-(2.0 + alpha)) / ((1.0 - alpha) * c3))
}

/// Sample points of both branches, the first one closed at its right end.
fn branch_points(t: &IntermittentMap, grid_size: usize) -> [Vec<f64>; 2] {
    grid::branch_samples(t.d_bar(), grid_size)
}

/// `sup x^{α-1} T(x)`. The limit at 0 is 0 and is not sampled.
pub fn compute_kt(t: &IntermittentMap, grid_size: usize) -> f64 {
    let alpha = t.params.alpha;
    let pts = branch_points(t, grid_size);
    let mut sup = 0.0f64;
    for b in Branch::BOTH {
        let f = t.branch(b);
        for &x in &pts[b.index()] {
            sup = sup.max(x.powf(alpha - 1.0) * f.value(x));
        }
    }
    sup
}

/// `sup |T'|`, including the left limit at the branch point.
pub fn compute_ct(t: &IntermittentMap, grid_size: usize) -> f64 {
    let pts = branch_points(t, grid_size);
    let mut sup = t.branch(Branch::First).d1(0.0).abs();
    for b in Branch::BOTH {
        let f = t.branch(b);
        for &x in &pts[b.index()] {
            sup = sup.max(f.d1(x).abs());
        }
    }
    sup
}

/// Supremum over `y ∈ (0,1]` of
/// `2C/T'(y)² · y^{α-1}T(y)/(a + bT(y)) + T(y)/(y T'(y)) · (a + by)/(a + bT(y))`.
///
/// The expression tends to 1 as `y → 0` for every map with an indifferent
/// fixed point; the supremum is taken over the grid, which stops at
/// [`grid::GEOMETRIC_FLOOR`]. The cone is contracted iff the value is `< 1`.
pub fn verify_cone_contraction(t: &IntermittentMap, a: f64, b: f64, grid_size: usize) -> Result<f64> {
    if !(a > 0.0 && b >= 0.0) {
        return Err(Error::InvalidParameter(format!("need a>0, b>=0 (got {a}, {b})")));
    }
    let alpha = t.params.alpha;
    let c_big = t.params.c_big;
    let pts = branch_points(t, grid_size);
    let mut sup = f64::NEG_INFINITY;
    for br in Branch::BOTH {
        let f = t.branch(br);
        for &y in &pts[br.index()] {
            let ty = f.value(y);
            let dy = f.d1(y).abs();
            let denom = a + b * ty;
            let first = 2.0 * c_big / (dy * dy) * y.powf(alpha - 1.0) * ty / denom;
            let second = ty / (y * dy) * (a + b * y) / denom;
            sup = sup.max(first + second);
        }
    }
    Ok(sup)
}

const A_DOUBLINGS: i32 = 20;
const B_RATIO_LOG2: std::ops::RangeInclusive<i32> = -10..=30;

/// Cone parameters and the diagnostics of their construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConeParameters {
    pub a_t: f64,
    pub b_t: f64,
    /// `1.01 · sup 4 C K_T / |T'|²`.
    pub a_min: f64,
    /// `sup (2c_T T - x|T'|) / ((|T'| - 2c_T) T x)`; infinite when the
    /// denominator vanishes.
    pub b_ratio_literal: f64,
    pub contraction: f64,
    pub grid_size: usize,
}

/// Cone parameters `(a_T, b_T)`.
///
/// `a_T` starts at `1.01 · sup 4CK_T/|T'|²` and is doubled until a `b_T`
/// makes [`verify_cone_contraction`] `< 1`; candidate `b_T` values are `0`
/// and `a_T · 2^k`, `k = -10..=30`, tried in increasing order. The literal
/// ratio bound for `b_T/a_T` is reported alongside but not used: since
/// `c_T = sup|T'|` its denominator never changes sign and it vanishes where
/// `T(y) = 0`.
pub fn compute_at_bt(t: &IntermittentMap, grid_size: usize) -> Result<ConeParameters> {
    let c_big = t.params.c_big;
    let kt = compute_kt(t, grid_size);
    let ct = compute_ct(t, grid_size);
    let pts = branch_points(t, grid_size);

    let mut m3 = 4.0 * c_big * kt / t.branch(Branch::First).d1(0.0).powi(2);
    let mut m4 = f64::NEG_INFINITY;
    for b in Branch::BOTH {
        let f = t.branch(b);
        for &x in &pts[b.index()] {
            let d = f.d1(x).abs();
            let tx = f.value(x);
            m3 = m3.max(4.0 * c_big * kt / (d * d));
            let den = (d - 2.0 * ct) * tx * x;
            let r = if den == 0.0 {
                f64::INFINITY
            } else {
                (2.0 * ct * tx - x * d) / den
            };
            m4 = m4.max(r);
        }
    }
    let a_min = SAFETY_FACTOR * m3;

    for j in 0..=A_DOUBLINGS {
        let a = a_min * 2f64.powi(j);
        let candidates = std::iter::once(0.0).chain(B_RATIO_LOG2.map(|k| a * 2f64.powi(k)));
        for b in candidates {
            let factor = verify_cone_contraction(t, a, b, grid_size)?;
            if factor < 1.0 {
                return Ok(ConeParameters {
                    a_t: a,
                    b_t: b,
                    a_min,
                    b_ratio_literal: m4,
                    contraction: factor,
                    grid_size,
                });
            }
        }
    }
    Err(Error::NotCertifiable(format!(
        "{}: no (a,b) with a <= 2^{A_DOUBLINGS} a_min contracts the log-derivative cone",
        t.label
    )))
}

/// `max(A*, A*(a_T + b_T))`.
pub fn strong_norm_bound_m(a_star: f64, a_t: f64, b_t: f64) -> f64 {
    a_star.max(a_star * (a_t + b_t))
}

/// All constants of a map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantsReport {
    pub alpha: f64,
    #[serde(rename = "C")]
    pub c_big: f64,
    #[serde(rename = "A_star")]
    pub a_star: f64,
    #[serde(rename = "K_T")]
    pub k_t: f64,
    #[serde(rename = "c_T")]
    pub c_t: f64,
    #[serde(rename = "a_T")]
    pub a_t: f64,
    #[serde(rename = "b_T")]
    pub b_t: f64,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "C_tilde")]
    pub c_tilde: f64,
    #[serde(rename = "a_T_min")]
    pub a_t_min: f64,
    /// `None` when infinite.
    pub b_ratio_literal: Option<f64>,
    pub contraction_factor: f64,
    pub grid_size: usize,
}

pub fn constants_report(t: &IntermittentMap, grid_size: usize) -> Result<ConstantsReport> {
    let p = &t.params;
    let a_s = a_star(p.alpha, p.c3, p.d)?;
    let cone = compute_at_bt(t, grid_size)?;
    Ok(ConstantsReport {
        alpha: p.alpha,
        c_big: p.c_big,
        a_star: a_s,
        k_t: compute_kt(t, grid_size),
        c_t: compute_ct(t, grid_size),
        a_t: cone.a_t,
        b_t: cone.b_t,
        m: strong_norm_bound_m(a_s, cone.a_t, cone.b_t),
        c_tilde: 1.0,
        a_t_min: cone.a_min,
        b_ratio_literal: cone.b_ratio_literal.is_finite().then_some(cone.b_ratio_literal),
        contraction_factor: cone.contraction,
        grid_size,
    })
}

/// `1 - 1/((γ/2)(1-α) + 1)`, for `0 < γ < 1/α - 1`.
pub fn holder_exponent(alpha: f64, gamma: f64) -> Result<f64> {
    check_gamma(alpha, gamma)?;
    let r = rate_exponent(alpha, gamma);
    Ok(r / (r + 1.0))
}

/// `(γ/2)(1-α)`.
pub fn rate_exponent(alpha: f64, gamma: f64) -> f64 {
    0.5 * gamma * (1.0 - alpha)
}

/// `0.9 (1/α - 1)`.
pub fn default_gamma(alpha: f64) -> f64 {
    0.9 * (1.0 / alpha - 1.0)
}

pub fn check_gamma(alpha: f64, gamma: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha={alpha} must lie in (0,1)")));
    }
    if !(gamma > 0.0 && gamma < 1.0 / alpha - 1.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma={gamma} must lie in (0, {})",
            1.0 / alpha - 1.0
        )));
    }
    Ok(())
}

/// `φ(n) = C_φ n^{-a}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateModel {
    pub c_phi: f64,
    pub a: f64,
}

const INTEGER_SNAP: f64 = 1e-12;

impl RateModel {
    pub fn new(c_phi: f64, a: f64) -> Result<Self> {
        if !(c_phi > 0.0 && c_phi.is_finite() && a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "rate model needs C_phi>0, a>0 (got {c_phi}, {a})"
            )));
        }
        Ok(Self { c_phi, a })
    }

    /// Smallest `C_φ` with `‖Pⁿg‖₁ ≤ C_φ n^{-a} ‖g‖_α` on every series and
    /// every `n ≥ 1`.
    pub fn calibrate(series: &[DecaySeries], a: f64) -> Result<Self> {
        let mut c = 0.0f64;
        for s in series {
            if !(s.g_alpha_norm > 0.0) {
                continue;
            }
            for (&n, &v) in s.ns.iter().zip(&s.norms) {
                if n >= 1 {
                    c = c.max((n as f64).powf(a) * v / s.g_alpha_norm);
                }
            }
        }
        if !(c > 0.0) {
            return Err(Error::Fit("no positive decay data to calibrate C_phi".into()));
        }
        Self::new(c, a)
    }

    pub fn phi(&self, n: f64) -> f64 {
        self.c_phi * n.powf(-self.a)
    }

    pub fn psi(&self, x: f64) -> f64 {
        self.phi(x) / x
    }

    /// `(C_φ/ε)^{1/(a+1)}`.
    pub fn psi_inverse(&self, eps: f64) -> Result<f64> {
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(format!("eps={eps} must be positive")));
        }
        Ok((self.c_phi / eps).powf(1.0 / (self.a + 1.0)))
    }

    /// `⌈ψ⁻¹(ε)⌉`, at least 1. Values within `1e-12` (relative) of an
    /// integer are taken as that integer.
    pub fn choose_n(&self, eps: f64) -> Result<usize> {
        let x = self.psi_inverse(eps)?;
        let r = x.round();
        let n = if (x - r).abs() <= INTEGER_SNAP * r.max(1.0) {
            r
        } else {
            x.ceil()
        };
        Ok((n as usize).max(1))
    }
}

/// Evaluated stability bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityBound {
    pub eps: f64,
    /// `None` for `ε = 0`.
    pub n_chosen: Option<usize>,
    /// `3M ε (ψ⁻¹(ε) + 1)`.
    pub bound_value: f64,
    /// `1 - 1/(a+1)`.
    pub holder_exponent: f64,
    /// `K₁ = 3M C_φ^{1/(a+1)}`.
    pub k1: f64,
    /// `K₁ ε^{1-1/(a+1)}`.
    pub asymptotic: f64,
}

pub fn stability_bound(m: f64, eps: f64, rm: &RateModel) -> Result<StabilityBound> {
    if !(m > 0.0) || !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!("need M>0, eps>=0 (got {m}, {eps})")));
    }
    let inv = 1.0 / (rm.a + 1.0);
    let k1 = 3.0 * m * rm.c_phi.powf(inv);
    let holder = rm.a / (rm.a + 1.0);
    if eps == 0.0 {
        return Ok(StabilityBound {
            eps,
            n_chosen: None,
            bound_value: 0.0,
            holder_exponent: holder,
            k1,
            asymptotic: 0.0,
        });
    }
    Ok(StabilityBound {
        eps,
        n_chosen: Some(rm.choose_n(eps)?),
        bound_value: 3.0 * m * eps * (rm.psi_inverse(eps)? + 1.0),
        holder_exponent: holder,
        k1,
        asymptotic: k1 * eps.powf(holder),
    })
}

/// Least-squares line through `(log x, log y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLawFit {
    pub prefactor: f64,
    pub exponent: f64,
    pub rms_residual: f64,
}

pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<PowerLawFit> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::Fit(format!(
            "need at least 3 paired points (got {} and {})",
            xs.len(),
            ys.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Fit("power-law fit needs positive finite data".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("abscissae are all equal".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(PowerLawFit {
        prefactor: intercept.exp(),
        exponent: slope,
        rms_residual: (rss / n).sqrt(),
    })
}

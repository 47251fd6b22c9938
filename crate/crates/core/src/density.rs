//! Densities on [0,1] with an integrable singularity at the origin.
//!
//! A [`PiecewiseDensity`] stores one value per cell of a [`GradedMesh`],
//! located at the cell midpoint. Between midpoints the density is the
//! linear interpolant; on the outer half-cells it is extended by a
//! constant. The integral of the interpolant is `Σ ωᵢ vᵢ`, where `ωᵢ` is the
//! length of the control volume around midpoint `i` (bounded by the
//! averages of neighbouring midpoints). The Ulam operator acts on these
//! control volumes, so discrete mass and integral agree exactly.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Relative slack of the non-strict monotonicity check.
pub const MONOTONE_SLACK: f64 = 1e-12;

/// Tolerance on the total mass of a cone element.
pub const CONE_MASS_TOL: f64 = 1e-6;

/// Mesh with nodes `x_k = (k/n)^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradedMesh {
    n: usize,
    p: f64,
    nodes: Vec<f64>,
    midpoints: Vec<f64>,
    bounds: Vec<f64>,
    weights: Vec<f64>,
}

impl GradedMesh {
    pub fn new(n: usize, p: f64) -> Result<Arc<Self>> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!("mesh needs n >= 2 cells, got {n}")));
        }
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::InvalidParameter(format!("grading exponent p={p} must be >= 1")));
        }
        let mut nodes: Vec<f64> = (0..=n).map(|k| (k as f64 / n as f64).powf(p)).collect();
        nodes[0] = 0.0;
        nodes[n] = 1.0;
        let midpoints: Vec<f64> = nodes.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let mut bounds = Vec::with_capacity(n + 1);
        bounds.push(0.0);
        bounds.extend(midpoints.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        bounds.push(1.0);
        let weights = bounds.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Arc::new(Self {
            n,
            p,
            nodes,
            midpoints,
            bounds,
            weights,
        }))
    }

    /// Default grading `p = 2/(1-α)`.
    pub fn default_grading(alpha: f64) -> f64 {
        2.0 / (1.0 - alpha)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn midpoints(&self) -> &[f64] {
        &self.midpoints
    }

    /// Control-volume boundaries: `0`, averages of adjacent midpoints, `1`.
    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }

    /// Control-volume lengths; these are the quadrature weights of the
    /// interpolant.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn same_as(&self, other: &GradedMesh) -> bool {
        std::ptr::eq(self, other) || (self.n == other.n && self.p == other.p)
    }
}

/// Build a graded mesh with `n` cells and grading exponent `p`.
pub fn build_mesh(n: usize, p: f64) -> Result<Arc<GradedMesh>> {
    GradedMesh::new(n, p)
}

/// Point of `(a, b)` at which the secant slope of `x^{-α}` equals its
/// derivative. Weighted slopes evaluated there are exact for the profile
/// `x^{-α}`; for nearly uniform cells this is the midpoint.
pub fn power_secant_point(a: f64, b: f64, alpha: f64) -> f64 {
    if a <= 0.0 || (b - a) <= 1e-6 * a {
        return 0.5 * (a + b);
    }
    let secant = (a.powf(-alpha) - b.powf(-alpha)) / (b - a);
    (secant / alpha).powf(-1.0 / (alpha + 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormReport {
    pub l1: f64,
    pub alpha_norm: f64,
    pub lip: f64,
    pub sup_weighted_value: f64,
    pub sup_weighted_derivative: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseDensity {
    mesh: Arc<GradedMesh>,
    values: Vec<f64>,
}

impl PiecewiseDensity {
    pub fn new(mesh: Arc<GradedMesh>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.n() {
            return Err(Error::InvalidParameter(format!(
                "{} values for {} cells",
                values.len(),
                mesh.n()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite density value {v}")));
        }
        Ok(Self { mesh, values })
    }

    /// Sample `f` at the cell midpoints.
    pub fn from_fn(mesh: Arc<GradedMesh>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = mesh.midpoints().iter().map(|&x| f(x)).collect();
        Self::new(mesh, values)
    }

    pub fn constant(mesh: Arc<GradedMesh>, c: f64) -> Self {
        let n = mesh.n();
        Self {
            mesh,
            values: vec![c; n],
        }
    }

    /// Density with the given control-volume masses.
    pub fn from_masses(mesh: Arc<GradedMesh>, masses: &[f64]) -> Result<Self> {
        let values = masses
            .iter()
            .zip(mesh.weights())
            .map(|(m, w)| m / w)
            .collect();
        Self::new(mesh, values)
    }

    pub fn mesh(&self) -> &Arc<GradedMesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Control-volume masses `ωᵢ vᵢ`.
    pub fn masses(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(self.mesh.weights())
            .map(|(v, w)| v * w)
            .collect()
    }

    fn check_mesh(&self, other: &PiecewiseDensity) -> Result<()> {
        if self.mesh.same_as(&other.mesh) {
            Ok(())
        } else {
            Err(Error::MeshMismatch)
        }
    }

    pub fn sub(&self, other: &PiecewiseDensity) -> Result<Self> {
        self.check_mesh(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            mesh: self.mesh.clone(),
            values,
        })
    }

    pub fn add_scaled(&self, other: &PiecewiseDensity, k: f64) -> Result<Self> {
        self.check_mesh(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + k * b)
            .collect();
        Ok(Self {
            mesh: self.mesh.clone(),
            values,
        })
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            mesh: self.mesh.clone(),
            values: self.values.iter().map(|v| k * v).collect(),
        }
    }

    /// Value of the interpolant at `x ∈ [0,1]`.
    pub fn eval(&self, x: f64) -> f64 {
        let m = self.mesh.midpoints();
        let n = m.len();
        if x <= m[0] {
            return self.values[0];
        }
        if x >= m[n - 1] {
            return self.values[n - 1];
        }
        let i = m.partition_point(|&mi| mi <= x) - 1;
        let t = (x - m[i]) / (m[i + 1] - m[i]);
        self.values[i] + t * (self.values[i + 1] - self.values[i])
    }

    /// Signed integral of the interpolant.
    pub fn integral(&self) -> f64 {
        self.values
            .iter()
            .zip(self.mesh.weights())
            .map(|(v, w)| v * w)
            .sum()
    }

    /// Integral of the interpolant of `|f|`.
    pub fn l1_norm(&self) -> f64 {
        self.values
            .iter()
            .zip(self.mesh.weights())
            .map(|(v, w)| v.abs() * w)
            .sum()
    }

    /// `∫₀ˣ f`, exact for the interpolant.
    pub fn cumulative_at(&self, x: f64) -> f64 {
        let m = self.mesh.midpoints();
        let v = &self.values;
        let n = m.len();
        let x = x.clamp(0.0, 1.0);
        if x <= m[0] {
            return v[0] * x;
        }
        let mut acc = v[0] * m[0];
        for i in 0..n - 1 {
            if x <= m[i + 1] {
                let fx = self.eval(x);
                return acc + 0.5 * (v[i] + fx) * (x - m[i]);
            }
            acc += 0.5 * (v[i] + v[i + 1]) * (m[i + 1] - m[i]);
        }
        acc + v[n - 1] * (x - m[n - 1])
    }

    /// Cumulative integrals at every mesh node, in one pass.
    pub fn cumulative_at_nodes(&self) -> Vec<f64> {
        let mesh = &self.mesh;
        let (m, x, v) = (mesh.midpoints(), mesh.nodes(), &self.values);
        let n = m.len();
        let mut out = Vec::with_capacity(n + 1);
        out.push(0.0);
        // integral up to each midpoint
        let mut at_mid = vec![v[0] * m[0]; n];
        for i in 1..n {
            at_mid[i] = at_mid[i - 1] + 0.5 * (v[i - 1] + v[i]) * (m[i] - m[i - 1]);
        }
        for k in 1..n {
            // node x_k lies in (m_{k-1}, m_k)
            let t = (x[k] - m[k - 1]) / (m[k] - m[k - 1]);
            let fx = v[k - 1] + t * (v[k] - v[k - 1]);
            out.push(at_mid[k - 1] + 0.5 * (v[k - 1] + fx) * (x[k] - m[k - 1]));
        }
        out.push(at_mid[n - 1] + v[n - 1] * (1.0 - m[n - 1]));
        out
    }

    /// Weighted strong norm `max(sup x^α|f|, sup x^{α+1}|f'|)`.
    ///
    /// Essential suprema are replaced by suprema over the mesh: values at the
    /// midpoints, and interpolant slopes weighted at
    /// [`power_secant_point`] of each slope interval.
    pub fn alpha_norm(&self, alpha: f64) -> NormReport {
        let m = self.mesh.midpoints();
        let v = &self.values;
        let sup_value = m
            .iter()
            .zip(v)
            .map(|(x, f)| x.powf(alpha) * f.abs())
            .fold(0.0, f64::max);
        let sup_derivative = (0..m.len() - 1)
            .map(|i| {
                let slope = (v[i + 1] - v[i]) / (m[i + 1] - m[i]);
                let xi = power_secant_point(m[i], m[i + 1], alpha);
                xi.powf(alpha + 1.0) * slope.abs()
            })
            .fold(0.0, f64::max);
        NormReport {
            l1: self.l1_norm(),
            alpha_norm: sup_value.max(sup_derivative),
            lip: self.lip_norm(),
            sup_weighted_value: sup_value,
            sup_weighted_derivative: sup_derivative,
        }
    }

    /// `sup|f| + max |slope|` of the interpolant.
    pub fn lip_norm(&self) -> f64 {
        let m = self.mesh.midpoints();
        let v = &self.values;
        let sup = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let slope = (0..m.len() - 1)
            .map(|i| ((v[i + 1] - v[i]) / (m[i + 1] - m[i])).abs())
            .fold(0.0, f64::max);
        sup + slope
    }

    /// `f - ∫f`.
    pub fn zero_average_projection(&self) -> Self {
        let mut out = self.clone();
        // second pass removes the rounding left by the first
        for _ in 0..2 {
            let mean = out.integral();
            out.values.iter_mut().for_each(|v| *v -= mean);
        }
        out
    }

    /// Write `x_mid,value` CSV with a `# n=…, p=…` header comment.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# n={}, p={}", self.mesh.n(), self.mesh.p())?;
        writeln!(w, "x_mid,value")?;
        for (x, v) in self.mesh.midpoints().iter().zip(&self.values) {
            writeln!(w, "{x:e},{v:e}")?;
        }
        Ok(())
    }
}

/// Outcome of a cone-membership check. Margins are worst cases; a negative
/// margin is a violation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConeReport {
    pub passed: bool,
    /// `min f`.
    pub nonnegative_margin: f64,
    /// Worst `f_i - f_{i+1} + slack·max(1,|f_i|)`.
    pub monotone_margin: f64,
    /// `|∫f - 1|`.
    pub mass_error: f64,
    /// `min over nodes of A x^{1-α} - ∫₀ˣ f`.
    pub cumulative_margin: f64,
}

impl ConeReport {
    /// Verdict with an additive slack on the cumulative condition.
    pub fn passes_with_slack(&self, slack: f64) -> bool {
        self.nonnegative_margin >= 0.0
            && self.monotone_margin >= 0.0
            && self.mass_error <= CONE_MASS_TOL
            && self.cumulative_margin >= -slack
    }
}

/// Membership in `C_A`: nonnegative, nonincreasing, unit mass and
/// `∫₀ˣ f ≤ A x^{1-α}` at every mesh node.
pub fn cone_ca_check(f: &PiecewiseDensity, a: f64, alpha: f64) -> ConeReport {
    let v = f.values();
    let nonneg = v.iter().copied().fold(f64::INFINITY, f64::min);
    let monotone = v
        .windows(2)
        .map(|w| w[0] - w[1] + MONOTONE_SLACK * w[0].abs().max(1.0))
        .fold(f64::INFINITY, f64::min);
    let mass_error = (f.integral() - 1.0).abs();
    let cumulative = f
        .cumulative_at_nodes()
        .iter()
        .zip(f.mesh().nodes())
        .skip(1)
        .map(|(c, x)| a * x.powf(1.0 - alpha) - c)
        .fold(f64::INFINITY, f64::min);
    let mut r = ConeReport {
        passed: false,
        nonnegative_margin: nonneg,
        monotone_margin: monotone,
        mass_error,
        cumulative_margin: cumulative,
    };
    r.passed = r.passes_with_slack(0.0);
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogDerivativeReport {
    pub passed: bool,
    pub nonnegative_margin: f64,
    /// Largest `|f'(x)| x / ((a + b x) f(x))`; must not exceed 1.
    pub worst_ratio: f64,
}

/// Membership in the logarithmic-derivative cone
/// `|f'(x)| ≤ ((a + b x)/x) f(x)`, checked on every slope interval at
/// [`power_secant_point`].
pub fn cone_c0_check(f: &PiecewiseDensity, a: f64, b: f64, alpha: f64) -> LogDerivativeReport {
    let m = f.mesh().midpoints();
    let v = f.values();
    let nonneg = v.iter().copied().fold(f64::INFINITY, f64::min);
    let mut worst = 0.0f64;
    for i in 0..m.len() - 1 {
        let slope = (v[i + 1] - v[i]) / (m[i + 1] - m[i]);
        if slope == 0.0 {
            continue;
        }
        let x = power_secant_point(m[i], m[i + 1], alpha);
        let fx = f.eval(x);
        let ratio = slope.abs() * x / ((a + b * x) * fx);
        worst = worst.max(if fx > 0.0 { ratio } else { f64::INFINITY });
    }
    LogDerivativeReport {
        passed: nonneg >= 0.0 && worst <= 1.0,
        nonnegative_margin: nonneg,
        worst_ratio: worst,
    }
}

/// Normalised kernel `min(t^{-α}, x^{-α}) / Z_t` sampled on `mesh` and
/// renormalised to unit discrete mass.
pub fn cone_kernel(mesh: Arc<GradedMesh>, t: f64, alpha: f64) -> Result<PiecewiseDensity> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::InvalidParameter(format!("kernel cut t={t} must lie in (0,1]")));
    }
    let cap = t.powf(-alpha);
    let f = PiecewiseDensity::from_fn(mesh, |x| cap.min(x.powf(-alpha)))?;
    let mass = f.integral();
    Ok(f.scaled(1.0 / mass))
}

const KERNEL_CUT_MIN: f64 = 1e-8;
const MAX_KERNELS: usize = 4;
const FLATTEN_CAP: usize = 60;

/// Random element of `C_A` on `mesh`, reproducible from `seed`.
///
/// A convex combination of one to four [`cone_kernel`]s with cuts drawn
/// log-uniformly from `[1e-8, 1]`. If the combination violates the
/// cumulative bound, all cuts are moved towards 1 (`t ← √t`) until it holds.
pub fn sample_cone_element(mesh: Arc<GradedMesh>, a: f64, alpha: f64, seed: u64) -> Result<PiecewiseDensity> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(1..=MAX_KERNELS);
    let mut cuts: Vec<f64> = (0..k)
        .map(|_| KERNEL_CUT_MIN.powf(rng.gen::<f64>()))
        .collect();
    let mut weights: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 1e-3).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    for _ in 0..FLATTEN_CAP {
        let mut f = PiecewiseDensity::constant(mesh.clone(), 0.0);
        for (&t, &w) in cuts.iter().zip(&weights) {
            f = f.add_scaled(&cone_kernel(mesh.clone(), t, alpha)?, w)?;
        }
        let f = f.scaled(1.0 / f.integral());
        if cone_ca_check(&f, a, alpha).passed {
            return Ok(f);
        }
        cuts.iter_mut().for_each(|t| *t = t.sqrt());
    }
    Err(Error::Sampling(format!(
        "no element of C_A with A={a}, alpha={alpha} found for seed {seed}"
    )))
}

//! Transfer operator of a two-branch map and its Ulam discretization.
//!
//! The pointwise operator is `Lf(x) = Σᵢ f(Tᵢ⁻¹x) / T'(Tᵢ⁻¹x)`. The Ulam
//! matrix acts on control-volume masses (see [`crate::density`]):
//! `P[j,i] = m(Dᵢ ∩ T⁻¹Dⱼ) / m(Dᵢ)`, with the preimages of every
//! control-volume boundary computed through the inverse branches, so no
//! sampling is involved.

use std::io::Write;
use std::sync::Arc;

use log::debug;
use rayon::prelude::*;
use serde::Serialize;

use crate::density::{self, GradedMesh, PiecewiseDensity};
use crate::error::{Error, Result};
use crate::map_family::{Branch, IntermittentMap, INVERSE_TOL};

/// Columns whose raw sum deviates from 1 by more than this are rescaled.
pub const COLUMN_RENORMALIZE_TOL: f64 = 1e-12;

const ROW_CHUNK: usize = 2048;

/// Pointwise transfer operator at `x ∈ (0,1]`.
pub fn apply_pointwise(t: &IntermittentMap, f: &PiecewiseDensity, x: f64) -> Result<f64> {
    if !(x > 0.0 && x <= 1.0) {
        return Err(Error::Domain {
            x,
            domain: "(0,1]",
        });
    }
    let mut acc = 0.0;
    for b in Branch::BOTH {
        let y = t.inverse(b, x, INVERSE_TOL)?;
        acc += f.eval(y) / t.branch(b).d1(y);
    }
    Ok(acc)
}

/// Sparse column-stochastic matrix in row-compressed storage.
#[derive(Debug, Clone)]
pub struct UlamOperator {
    mesh: Arc<GradedMesh>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    /// Largest `|column sum - 1|` before renormalisation.
    pub raw_column_deviation: f64,
}

/// Discretize the transfer operator of `t` on the control volumes of `mesh`.
pub fn assemble_ulam(t: &IntermittentMap, mesh: Arc<GradedMesh>) -> Result<UlamOperator> {
    let bounds = mesh.bounds();
    let weights = mesh.weights();
    let n = mesh.n();

    let preimages: Vec<Vec<f64>> = Branch::BOTH
        .iter()
        .map(|&b| {
            bounds
                .par_iter()
                .map(|&y| t.inverse(b, y, INVERSE_TOL))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut row: Vec<(usize, f64)> = Vec::new();
            for pre in &preimages {
                let (lo, hi) = (pre[j], pre[j + 1]);
                if hi <= lo {
                    continue;
                }
                let mut i = bounds.partition_point(|&b| b <= lo).saturating_sub(1);
                while i < n && bounds[i] < hi {
                    let overlap = hi.min(bounds[i + 1]) - lo.max(bounds[i]);
                    if overlap > 0.0 {
                        let v = overlap / weights[i];
                        match row.last_mut() {
                            Some((c, acc)) if *c == i => *acc += v,
                            _ => row.push((i, v)),
                        }
                    }
                    i += 1;
                }
            }
            row
        })
        .collect();

    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for row in rows {
        for (c, v) in row {
            cols.push(c);
            vals.push(v);
        }
        row_ptr.push(cols.len());
    }
    let mut op = UlamOperator {
        mesh,
        row_ptr,
        cols,
        vals,
        raw_column_deviation: 0.0,
    };
    let sums = op.column_sums();
    op.raw_column_deviation = sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    let fix: Vec<Option<f64>> = sums
        .iter()
        .map(|&s| ((s - 1.0).abs() > COLUMN_RENORMALIZE_TOL && s > 0.0).then_some(1.0 / s))
        .collect();
    let renormalized = fix.iter().filter(|f| f.is_some()).count();
    if renormalized > 0 {
        debug!(
            "{}: renormalised {renormalized} Ulam columns (max raw deviation {:e})",
            t.label, op.raw_column_deviation
        );
        for (c, v) in op.cols.iter().zip(op.vals.iter_mut()) {
            if let Some(k) = fix[*c] {
                *v *= k;
            }
        }
    }
    Ok(op)
}

impl UlamOperator {
    pub fn mesh(&self) -> &Arc<GradedMesh> {
        &self.mesh
    }

    pub fn n(&self) -> usize {
        self.mesh.n()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Entries of row `j` as `(column, value)`.
    pub fn row(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[j]..self.row_ptr[j + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    /// Dense lookup of `P[j,i]` (zero when absent).
    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.row(j).filter(|&(c, _)| c == i).map(|(_, v)| v).sum()
    }

    /// Column sums, accumulated in row order.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n()];
        for (c, v) in self.cols.iter().zip(&self.vals) {
            sums[*c] += v;
        }
        sums
    }

    /// `P·masses`. Each row is reduced sequentially, so the result does not
    /// depend on the number of threads.
    pub fn apply_masses(&self, masses: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        self.apply_masses_into(masses, &mut out);
        out
    }

    /// In-place variant of [`Self::apply_masses`].
    pub fn apply_masses_into(&self, masses: &[f64], out: &mut [f64]) {
        assert_eq!(masses.len(), self.n());
        assert_eq!(out.len(), self.n());
        out.par_chunks_mut(ROW_CHUNK).enumerate().for_each(|(c, chunk)| {
            let first = c * ROW_CHUNK;
            for (k, o) in chunk.iter_mut().enumerate() {
                let j = first + k;
                let r = self.row_ptr[j]..self.row_ptr[j + 1];
                *o = self.cols[r.clone()]
                    .iter()
                    .zip(&self.vals[r])
                    .map(|(&i, &p)| p * masses[i])
                    .sum();
            }
        });
    }

    fn check_mesh(&self, f: &PiecewiseDensity) -> Result<()> {
        if self.mesh.same_as(f.mesh()) {
            Ok(())
        } else {
            Err(Error::MeshMismatch)
        }
    }

    pub fn apply(&self, f: &PiecewiseDensity) -> Result<PiecewiseDensity> {
        self.check_mesh(f)?;
        PiecewiseDensity::from_masses(self.mesh.clone(), &self.apply_masses(&f.masses()))
    }

    /// `Pⁿ f`.
    pub fn apply_n(&self, f: &PiecewiseDensity, n: usize) -> Result<PiecewiseDensity> {
        self.check_mesh(f)?;
        let mut m = f.masses();
        for _ in 0..n {
            m = self.apply_masses(&m);
        }
        PiecewiseDensity::from_masses(self.mesh.clone(), &m)
    }

    /// Sparse triplets `row,col,value`, one per line, with a header.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "row,col,value")?;
        for j in 0..self.n() {
            for (i, v) in self.row(j) {
                writeln!(w, "{j},{i},{v:e}")?;
            }
        }
        Ok(())
    }
}

/// Apply the Ulam operator to a density.
pub fn apply_ulam(p: &UlamOperator, f: &PiecewiseDensity) -> Result<PiecewiseDensity> {
    p.apply(f)
}

/// Converged fixed point of the power iteration.
#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub density: PiecewiseDensity,
    pub iterations: usize,
    /// L¹ distance between the last two iterates.
    pub residual: f64,
}

fn l1_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Power iteration from `start`, renormalised to unit mass every step,
/// until successive iterates differ by at most `tol` in L¹.
pub fn power_iterate(p: &UlamOperator, start: &PiecewiseDensity, tol: f64, max_iter: usize) -> Result<FixedPoint> {
    p.check_mesh(start)?;
    let mass = start.integral();
    if !(mass > 0.0) {
        return Err(Error::InvalidParameter("start density must have positive mass".into()));
    }
    let mut cur: Vec<f64> = start.masses().iter().map(|m| m / mass).collect();
    let mut next = vec![0.0; cur.len()];
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        p.apply_masses_into(&cur, &mut next);
        let total: f64 = next.iter().sum();
        residual = 0.0;
        for (n, c) in next.iter_mut().zip(&cur) {
            *n /= total;
            residual += (*n - c).abs();
        }
        std::mem::swap(&mut cur, &mut next);
        if residual <= tol {
            return Ok(FixedPoint {
                density: PiecewiseDensity::from_masses(p.mesh.clone(), &cur)?,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual,
    })
}

/// Invariant density by power iteration from the uniform density.
pub fn invariant_density(p: &UlamOperator, tol: f64, max_iter: usize) -> Result<FixedPoint> {
    let start = PiecewiseDensity::constant(p.mesh.clone(), 1.0);
    power_iterate(p, &start, tol, max_iter)
}

/// `‖Pⁿg‖₁` for `n = 0..=N`.
#[derive(Debug, Clone, Serialize)]
pub struct DecaySeries {
    pub ns: Vec<usize>,
    pub norms: Vec<f64>,
    pub g_alpha_norm: f64,
}

impl DecaySeries {
    /// CSV `n,l1_norm`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,l1_norm")?;
        for (n, v) in self.ns.iter().zip(&self.norms) {
            writeln!(w, "{n},{v:e}")?;
        }
        Ok(())
    }
}

/// Tolerance (relative to `max(1, ‖g‖₁)`) for the zero-average precondition.
pub const ZERO_AVERAGE_TOL: f64 = 1e-12;

pub fn iterate_norms(p: &UlamOperator, g: &PiecewiseDensity, n_max: usize, alpha: f64) -> Result<DecaySeries> {
    p.check_mesh(g)?;
    let integral = g.integral();
    if integral.abs() > ZERO_AVERAGE_TOL * g.l1_norm().max(1.0) {
        return Err(Error::NonZeroAverage(integral));
    }
    let mut m = g.masses();
    let mut norms = Vec::with_capacity(n_max + 1);
    norms.push(g.l1_norm());
    for _ in 0..n_max {
        m = p.apply_masses(&m);
        norms.push(m.iter().map(|x| x.abs()).sum());
    }
    Ok(DecaySeries {
        ns: (0..=n_max).collect(),
        norms,
        g_alpha_norm: g.alpha_norm(alpha).alpha_norm,
    })
}

/// Lower estimate of `sup_{‖f‖_α ≤ 1} ‖(P₁ - P₀)f‖₁` over a probe set.
pub fn operator_distance_mixed(
    p0: &UlamOperator,
    p1: &UlamOperator,
    probes: &[PiecewiseDensity],
    alpha: f64,
) -> Result<f64> {
    if !p0.mesh.same_as(&p1.mesh) {
        return Err(Error::MeshMismatch);
    }
    let mut best = 0.0f64;
    for f in probes {
        p0.check_mesh(f)?;
        let norm = f.alpha_norm(alpha).alpha_norm;
        if norm == 0.0 {
            continue;
        }
        let m = f.masses();
        let d = l1_diff(&p1.apply_masses(&m), &p0.apply_masses(&m)) / norm;
        best = best.max(d);
    }
    Ok(best)
}

/// Probe set for [`operator_distance_mixed`]: `count` cone samples, the
/// singular kernels with cuts `10^{-k}`, `k = 1..=8`, and `f ≡ 1`.
pub fn mixed_norm_probes(mesh: Arc<GradedMesh>, a: f64, alpha: f64, seed: u64, count: usize) -> Result<Vec<PiecewiseDensity>> {
    let mut probes = Vec::with_capacity(count + 9);
    for k in 0..count as u64 {
        probes.push(density::sample_cone_element(mesh.clone(), a, alpha, seed.wrapping_add(k))?);
    }
    for k in 1..=8 {
        probes.push(density::cone_kernel(mesh.clone(), 10f64.powi(-k), alpha)?);
    }
    probes.push(PiecewiseDensity::constant(mesh, 1.0));
    Ok(probes)
}

/// Named zero-average test function.
#[derive(Debug, Clone)]
pub struct Probe {
    pub name: String,
    pub f: PiecewiseDensity,
}

/// Kernel cuts used by [`zero_average_probes`].
pub const PROBE_KERNEL_CUTS: [f64; 5] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-6];

/// Twenty zero-average probes: `cos(kπx)` for `k = 1..=8`, the centred
/// kernels of [`density::cone_kernel`] with cuts [`PROBE_KERNEL_CUTS`], and
/// seven centred cone samples drawn from `seed`.
pub fn zero_average_probes(mesh: Arc<GradedMesh>, a: f64, alpha: f64, seed: u64) -> Result<Vec<Probe>> {
    let mut probes = Vec::with_capacity(20);
    for k in 1..=8 {
        let w = k as f64 * std::f64::consts::PI;
        let f = PiecewiseDensity::from_fn(mesh.clone(), |x| (w * x).cos())?;
        probes.push(Probe {
            name: format!("cos{k}"),
            f: f.zero_average_projection(),
        });
    }
    for t in PROBE_KERNEL_CUTS {
        probes.push(Probe {
            name: format!("kernel{t:e}"),
            f: density::cone_kernel(mesh.clone(), t, alpha)?.zero_average_projection(),
        });
    }
    for k in 0..7u64 {
        let f = density::sample_cone_element(mesh.clone(), a, alpha, seed.wrapping_add(k))?;
        probes.push(Probe {
            name: format!("cone{k}"),
            f: f.zero_average_projection(),
        });
    }
    Ok(probes)
}

/// L¹ norm of `(P₀ᴺ - P₁ᴺ)f - Σ_{k=1}^{N} P₀^{N-k}(P₀ - P₁)P₁^{k-1}f`.
pub fn telescoping_residual(p0: &UlamOperator, p1: &UlamOperator, f: &PiecewiseDensity, n: usize) -> Result<f64> {
    if !p0.mesh.same_as(&p1.mesh) {
        return Err(Error::MeshMismatch);
    }
    p0.check_mesh(f)?;
    let m0 = f.masses();
    let power = |p: &UlamOperator, mut m: Vec<f64>, k: usize| {
        for _ in 0..k {
            m = p.apply_masses(&m);
        }
        m
    };
    let lhs: Vec<f64> = power(p0, m0.clone(), n)
        .iter()
        .zip(power(p1, m0.clone(), n))
        .map(|(a, b)| a - b)
        .collect();
    let mut rhs = vec![0.0; m0.len()];
    let mut u = m0;
    for k in 1..=n {
        let diff: Vec<f64> = p0
            .apply_masses(&u)
            .iter()
            .zip(p1.apply_masses(&u))
            .map(|(a, b)| a - b)
            .collect();
        let term = power(p0, diff, n - k);
        rhs.iter_mut().zip(&term).for_each(|(r, t)| *r += t);
        u = p1.apply_masses(&u);
    }
    Ok(l1_diff(&lhs, &rhs))
}

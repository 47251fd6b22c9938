//! Experiment runners behind the command-line tool.
//!
//! Each runner returns a serialisable report with a `passed` verdict and
//! can write its CSV/JSON artefacts into a directory. All outputs are
//! deterministic functions of the configuration.

mod config;

pub use config::*;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{self, ConstantsReport, PowerLawFit, RateModel};
use crate::density::{self, build_mesh, ConeReport, PiecewiseDensity};
use crate::error::{Error, Result};
use crate::map_family::{self, IntermittentMap, MapDescription};
use crate::transfer::{self, DecaySeries, UlamOperator};

/// Relative slack on `h(x) ≤ A* x^{-α}`.
pub const POINTWISE_SLACK: f64 = 0.05;
/// Additive slack on the cumulative condition of the cone check.
pub const CONE_SLACK: f64 = 1e-3;
/// Relative slack on `‖h‖_α ≤ M`.
pub const NORM_SLACK: f64 = 0.05;
/// Decay below this fraction of the initial envelope marks the
/// exponential regime.
pub const EXPONENTIAL_FLOOR: f64 = 1e-12;
/// Largest RMS log-residual accepted for a power-law decay fit.
pub const DECAY_FIT_RMS: f64 = 0.15;
/// Largest accepted decay exponent.
pub const DECAY_EXPONENT_MAX: f64 = 1.2;
/// Tolerance on the Hölder slope verdict.
pub const SLOPE_TOLERANCE: f64 = 0.05;
/// Distances below this multiple of the solver tolerance are left out of
/// the Hölder fit.
pub const NOISE_FLOOR_FACTOR: f64 = 10.0;
/// Cone samples in the probe set of the operator distance.
const MIXED_PROBE_SAMPLES: usize = 20;

fn build_operator(t: &IntermittentMap, cfg: &ExperimentConfig) -> Result<UlamOperator> {
    transfer::assemble_ulam(t, build_mesh(cfg.n, cfg.p)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Pretty JSON followed by a newline.
pub fn emit_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// CSV with a header line and one formatted line per row.
pub fn emit_csv<R>(path: &Path, header: &str, rows: &[R], line: impl Fn(&R) -> String) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for r in rows {
        writeln!(w, "{}", line(r))?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- density

#[derive(Debug, Clone, Serialize)]
pub struct DensityReport {
    pub map: String,
    pub n: usize,
    pub p: f64,
    pub iterations: usize,
    pub residual: f64,
    pub a_star: f64,
    pub cone: ConeReport,
    pub cone_passed: bool,
    /// `max h(x) x^α / A*` over the midpoints.
    pub pointwise_ratio: f64,
    pub pointwise_passed: bool,
    pub alpha_norm: f64,
    /// `None` when the cone constants cannot be certified.
    pub m: Option<f64>,
    pub norm_passed: bool,
    pub passed: bool,
    #[serde(skip)]
    pub density: PiecewiseDensity,
}

impl DensityReport {
    pub fn write(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        self.density.write_csv(BufWriter::new(File::create(dir.join("density.csv"))?))?;
        emit_json(self, &dir.join("density.json"))
    }
}

/// Invariant density and its cone and norm certificates.
pub fn run_density(cfg: &ExperimentConfig) -> Result<DensityReport> {
    let t = cfg.map.build()?;
    let alpha = t.params.alpha;
    let op = build_operator(&t, cfg)?;
    let fp = transfer::invariant_density(&op, cfg.tol, cfg.max_iter)?;
    let h = fp.density;
    let a_star = bounds::a_star(alpha, t.params.c3, t.params.d)?;
    let cone = density::cone_ca_check(&h, a_star, alpha);
    let cone_passed = cone.passes_with_slack(CONE_SLACK);
    let pointwise_ratio = h
        .values()
        .iter()
        .zip(h.mesh().midpoints())
        .map(|(v, x)| v * x.powf(alpha) / a_star)
        .fold(0.0, f64::max);
    let pointwise_passed = pointwise_ratio <= 1.0 + POINTWISE_SLACK;
    let alpha_norm = h.alpha_norm(alpha).alpha_norm;
    let m = match bounds::compute_at_bt(&t, cfg.grid) {
        Ok(c) => Some(bounds::strong_norm_bound_m(a_star, c.a_t, c.b_t)),
        Err(Error::NotCertifiable(msg)) => {
            info!("{msg}");
            None
        }
        Err(e) => return Err(e),
    };
    let norm_passed = m.is_some_and(|m| alpha_norm <= m * (1.0 + NORM_SLACK));
    Ok(DensityReport {
        map: t.label.clone(),
        n: cfg.n,
        p: cfg.p,
        iterations: fp.iterations,
        residual: fp.residual,
        a_star,
        cone,
        cone_passed,
        pointwise_ratio,
        pointwise_passed,
        alpha_norm,
        m,
        norm_passed,
        passed: cone_passed && pointwise_passed && norm_passed,
        density: h,
    })
}

// ------------------------------------------------------------ equilibrium

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    PowerLaw,
    Exponential,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeDecay {
    pub name: String,
    pub g_alpha_norm: f64,
    pub fit: Option<PowerLawFit>,
    #[serde(skip)]
    pub series: DecaySeries,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumReport {
    pub map: String,
    pub n_mesh: usize,
    pub n_iter: usize,
    pub fit_from: usize,
    pub regime: Regime,
    /// Fit of `sup_g ‖Pⁿg‖₁ / ‖g‖_α` over the fit window.
    pub envelope_fit: Option<PowerLawFit>,
    /// `C_φ` calibrated for the exponent `(γ/2)(1-α)`.
    pub rate_model: RateModel,
    pub probes: Vec<ProbeDecay>,
    pub passed: bool,
    #[serde(skip)]
    pub envelope: Vec<f64>,
}

impl EquilibriumReport {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let sub = dir.join("equilibrium");
        create_dir(&sub)?;
        for p in &self.probes {
            p.series.write_csv(BufWriter::new(File::create(sub.join(format!("{}.csv", p.name)))?))?;
        }
        let rows: Vec<(usize, f64)> = self.envelope.iter().copied().enumerate().collect();
        emit_csv(&sub.join("envelope.csv"), "n,l1_norm", &rows, |(n, v)| format!("{n},{v:e}"))?;
        emit_json(self, &dir.join("equilibrium.json"))
    }
}

fn fit_window(series: &[f64], from: usize) -> Option<PowerLawFit> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .enumerate()
        .skip(from)
        .filter(|(_, v)| **v > 0.0)
        .map(|(n, v)| (n as f64, *v))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    bounds::fit_power_law(&xs, &ys).ok()
}

/// Decay series of the zero-average probes under `op`.
pub fn decay_series(op: &UlamOperator, alpha: f64, a_star: f64, cfg: &ExperimentConfig) -> Result<Vec<(String, DecaySeries)>> {
    let probes = transfer::zero_average_probes(op.mesh().clone(), a_star, alpha, cfg.seed)?;
    probes
        .par_iter()
        .map(|p| Ok((p.name.clone(), transfer::iterate_norms(op, &p.f, cfg.n_iter, alpha)?)))
        .collect()
}

/// Decay of correlations for zero-average probes.
pub fn run_equilibrium(cfg: &ExperimentConfig) -> Result<EquilibriumReport> {
    let t = cfg.map.build()?;
    let alpha = t.params.alpha;
    let a_star = bounds::a_star(alpha, t.params.c3, t.params.d)?;
    let op = build_operator(&t, cfg)?;
    let series = decay_series(&op, alpha, a_star, cfg)?;

    let mut envelope = vec![0.0f64; cfg.n_iter + 1];
    for (_, s) in &series {
        for (e, v) in envelope.iter_mut().zip(&s.norms) {
            *e = e.max(v / s.g_alpha_norm);
        }
    }
    let regime = if envelope.iter().any(|&e| e <= EXPONENTIAL_FLOOR * envelope[0]) {
        Regime::Exponential
    } else {
        Regime::PowerLaw
    };
    let envelope_fit = fit_window(&envelope, cfg.fit_from);
    let probes: Vec<ProbeDecay> = series
        .iter()
        .map(|(name, s)| ProbeDecay {
            name: name.clone(),
            g_alpha_norm: s.g_alpha_norm,
            fit: fit_window(&s.norms, cfg.fit_from),
            series: s.clone(),
        })
        .collect();
    let all: Vec<DecaySeries> = series.into_iter().map(|(_, s)| s).collect();
    let rate_model = RateModel::calibrate(&all, bounds::rate_exponent(alpha, cfg.gamma))?;
    let passed = match regime {
        Regime::Exponential => true,
        Regime::PowerLaw => envelope_fit.is_some_and(|f| {
            f.exponent < 0.0 && -f.exponent <= DECAY_EXPONENT_MAX && f.rms_residual < DECAY_FIT_RMS
        }),
    };
    Ok(EquilibriumReport {
        map: t.label.clone(),
        n_mesh: cfg.n,
        n_iter: cfg.n_iter,
        fit_from: cfg.fit_from,
        regime,
        envelope_fit,
        rate_model,
        probes,
        passed,
        envelope,
    })
}

// -------------------------------------------------------------- stability

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityRow {
    pub s: f64,
    pub eps: f64,
    pub eps_n1: f64,
    pub eps_n2: f64,
    pub l1_distance: f64,
    pub bound: f64,
    pub n_chosen: Option<usize>,
    /// Probe lower estimate of `sup_{‖f‖_α ≤ 1} ‖(P_s - P₀)f‖₁`.
    pub operator_distance: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityRun {
    pub map: String,
    pub family: String,
    pub scale: f64,
    pub n_mesh: usize,
    pub rows: Vec<StabilityRow>,
    pub constants: ConstantsReport,
    pub rate_model: RateModel,
    /// Fit of `l1_distance` against `eps` over the rows above the noise floor.
    pub fit: Option<PowerLawFit>,
    pub fitted_rows: usize,
    pub holder_exponent: f64,
    /// Largest observed `operator_distance / eps`.
    pub c6_observed: f64,
    pub bounds_passed: bool,
    pub slope_passed: bool,
    pub passed: bool,
}

impl StabilityRun {
    /// The `s,eps,l1_distance,bound` table.
    pub fn csv(&self) -> String {
        let mut out = String::from("s,eps,l1_distance,bound\n");
        for r in &self.rows {
            out.push_str(&format!("{:e},{:e},{:e},{:e}\n", r.s, r.eps, r.l1_distance, r.bound));
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        fs::write(dir.join("stability.csv"), self.csv())?;
        emit_json(self, &dir.join("stability.json"))
    }
}

/// Hölder stability of the invariant density along a perturbation family.
pub fn run_stability(cfg: &ExperimentConfig) -> Result<StabilityRun> {
    let base_desc = match cfg.map {
        MapDescription::Base { .. } => &cfg.map,
        MapDescription::Perturbed { .. } => {
            return Err(Error::Config(
                "the stability run needs an unperturbed base map (kind=lsv or kind=doubling)".into(),
            ))
        }
    };
    let t0 = base_desc.build()?;
    let alpha = t0.params.alpha;
    let (kind, scale) = cfg.family_and_scale();
    let family = map_family::make_perturbed_family(&t0, kind, scale)?;

    let constants = bounds::constants_report(&t0, cfg.grid)?;
    let p0 = build_operator(&t0, cfg)?;
    let mesh = p0.mesh().clone();
    let f0 = transfer::invariant_density(&p0, cfg.tol, cfg.max_iter)?;
    let series = decay_series(&p0, alpha, constants.a_star, cfg)?;
    let all: Vec<DecaySeries> = series.into_iter().map(|(_, s)| s).collect();
    let rate_model = RateModel::calibrate(&all, bounds::rate_exponent(alpha, cfg.gamma))?;
    let probes = transfer::mixed_norm_probes(mesh.clone(), constants.a_star, alpha, cfg.seed, MIXED_PROBE_SAMPLES)?;

    let rows: Vec<StabilityRow> = cfg
        .s_list
        .par_iter()
        .map(|&s| -> Result<StabilityRow> {
            let ts = family.generate(s)?;
            let size = map_family::perturbation_size(&t0, &ts, cfg.grid)?;
            let (dist, iterations, op_dist) = if s == 0.0 {
                (0.0, f0.iterations, 0.0)
            } else {
                let ps = transfer::assemble_ulam(&ts, mesh.clone())?;
                let fs = transfer::invariant_density(&ps, cfg.tol, cfg.max_iter)?;
                let d = fs.density.sub(&f0.density)?.l1_norm();
                let od = transfer::operator_distance_mixed(&p0, &ps, &probes, alpha)?;
                (d, fs.iterations, od)
            };
            let b = bounds::stability_bound(constants.m, size.eps, &rate_model)?;
            info!("s={s}: eps={:e} distance={dist:e} bound={:e}", size.eps, b.bound_value);
            Ok(StabilityRow {
                s,
                eps: size.eps,
                eps_n1: size.eps_n1,
                eps_n2: size.eps_n2,
                l1_distance: dist,
                bound: b.bound_value,
                n_chosen: b.n_chosen,
                operator_distance: op_dist,
                iterations,
            })
        })
        .collect::<Result<_>>()?;

    let floor = NOISE_FLOOR_FACTOR * cfg.tol;
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.s > 0.0 && r.eps > 0.0 && r.l1_distance >= floor)
        .map(|r| (r.eps, r.l1_distance))
        .unzip();
    let fit = bounds::fit_power_law(&xs, &ys).ok();
    let holder_exponent = bounds::holder_exponent(alpha, cfg.gamma)?;
    let c6_observed = rows
        .iter()
        .filter(|r| r.eps > 0.0)
        .map(|r| r.operator_distance / r.eps)
        .fold(0.0, f64::max);
    let bounds_passed = rows.iter().all(|r| r.l1_distance <= r.bound);
    let slope_passed = fit.is_some_and(|f| f.exponent >= holder_exponent - SLOPE_TOLERANCE);
    Ok(StabilityRun {
        map: t0.label.clone(),
        family: kind.to_string(),
        scale,
        n_mesh: cfg.n,
        rows,
        constants,
        rate_model,
        fit,
        fitted_rows: xs.len(),
        holder_exponent,
        c6_observed,
        bounds_passed,
        slope_passed,
        passed: bounds_passed && slope_passed,
    })
}

// -------------------------------------------------------------- constants

/// Constants of the configured map.
pub fn run_constants(cfg: &ExperimentConfig) -> Result<ConstantsReport> {
    bounds::constants_report(&cfg.map.build()?, cfg.grid)
}

pub fn write_constants(report: &ConstantsReport, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    emit_json(report, &dir.join("constants.json"))
}

/// Write the configuration that produced a run next to its outputs.
pub fn write_config(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    fs::write(dir.join("config.txt"), cfg.to_string())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        text.parse().unwrap()
    }

    #[test]
    fn doubling_density_is_uniform() {
        let r = run_density(&cfg("kind=doubling\nalpha=0.5\nn=256\np=1")).unwrap();
        assert!(r.density.values().iter().all(|v| (v - 1.0).abs() < 1e-10));
        assert!(r.cone_passed);
        assert!(r.iterations <= 60);
    }

    #[test]
    fn coarse_density_reports_instead_of_failing() {
        let r = run_density(&cfg("alpha=0.5\nn=64\ntol=1e-9")).unwrap();
        assert!(r.pointwise_ratio > 0.0);
        assert!(r.m.is_some());
    }

    #[test]
    fn doubling_equilibrium_is_exponential() {
        let r = run_equilibrium(&cfg("kind=doubling\nalpha=0.5\nn=256\np=1\nn_iter=60")).unwrap();
        assert_eq!(r.regime, Regime::Exponential);
        assert!(r.passed);
    }

    #[test]
    fn constants_for_lsv() {
        let r = run_constants(&cfg("alpha=0.5")).unwrap();
        assert!((r.a_star - 8.0).abs() < 1e-12);
        let dir = tempfile::tempdir().unwrap();
        write_constants(&r, dir.path()).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("constants.json")).unwrap()).unwrap();
        assert_eq!(v["A_star"], 8.0);
    }

    #[test]
    fn stability_rejects_perturbed_base() {
        let c = cfg("kind=perturbed\nbase=lsv\nalpha=0.5\nfamily=second_branch_bump\ns=0.1\nscale=1");
        assert!(matches!(run_stability(&c), Err(Error::Config(_))));
    }

    #[test]
    fn coarse_stability_run() {
        let c = cfg("alpha=0.5\nn=512\ntol=1e-9\ns_list=0,0.02,0.04,0.08\nn_iter=60");
        let run = run_stability(&c).unwrap();
        assert_eq!(run.rows[0].l1_distance, 0.0);
        assert_eq!(run.rows[0].eps, 0.0);
        assert_eq!(run.rows[0].n_chosen, None);
        assert_eq!(run.fitted_rows, 3);
        assert!(run.rows.windows(2).all(|w| w[0].s < w[1].s));
        assert!(run.rows.iter().all(|r| r.l1_distance >= 0.0));
        let csv = run.csv();
        assert!(csv.starts_with("s,eps,l1_distance,bound\n0e0,0e0,0e0,0e0\n"));
        assert_eq!(csv.lines().count(), 5);
    }
}

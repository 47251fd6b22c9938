//! Acceptance suite: one PASS/FAIL line per criterion.

use std::process::ExitCode;
use std::time::Instant;

use astro_float::{BigFloat, Consts, RoundingMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lsv_stability::bounds::{self, RateModel};
use lsv_stability::density::{build_mesh, cone_ca_check, sample_cone_element, PiecewiseDensity};
use lsv_stability::experiment::{self, ExperimentConfig, Regime, StabilityRun};
use lsv_stability::map_family::{make_perturbed_family, BaseKind, FamilyKind, IntermittentMap, MapDescription};
use lsv_stability::transfer::{assemble_ulam, iterate_norms, power_iterate, telescoping_residual};

const COLUMN_TOL: f64 = 1e-10;
const CONTRACTION_SLACK: f64 = 1e-12;
const DOUBLING_TOL: f64 = 1e-10;
const DOUBLING_MAX_ITER: usize = 60;
const DYADIC_TOL: f64 = 1e-12;
const DYADIC_MAX_ITER: usize = 15;
const CONE_SLACK: f64 = 1e-3;
const POINTWISE_SLACK: f64 = 0.05;
const NORM_SLACK: f64 = 0.05;
const TELESCOPING_TOL: f64 = 2e-11;
const DECAY_RMS: f64 = 0.15;
const SLOPE_TOLERANCE: f64 = 0.05;
const ORACLE_REL: f64 = 1e-12;
const MESH: usize = 4096;
const TOL: f64 = 1e-10;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn lsv_config(alpha: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::for_map(MapDescription::Base {
        kind: BaseKind::Lsv,
        alpha,
    })
    .unwrap();
    cfg.n = MESH;
    cfg.tol = TOL;
    cfg
}

fn stability_config() -> ExperimentConfig {
    let mut cfg = lsv_config(0.5);
    cfg.family = Some(FamilyKind::SecondBranchBump);
    cfg.scale = Some(1.0);
    cfg.s_list = vec![0.01, 0.02, 0.04, 0.08];
    cfg.gamma = 0.9;
    cfg.seed = 1;
    cfg
}

fn operator_sanity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_col: f64 = 0.0;
    let mut worst_gain = f64::NEG_INFINITY;
    for alpha in [0.3, 0.5, 0.7] {
        let t = IntermittentMap::lsv(alpha).map_err(|e| e.to_string())?;
        let mesh = build_mesh(1024, 2.0 / (1.0 - alpha)).map_err(|e| e.to_string())?;
        let p = assemble_ulam(&t, mesh.clone()).map_err(|e| e.to_string())?;
        worst_col = worst_col.max(p.raw_column_deviation);
        for s in p.column_sums() {
            worst_col = worst_col.max((s - 1.0).abs());
        }
        for _ in 0..100 {
            let vals: Vec<f64> = (0..1024).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f = PiecewiseDensity::new(mesh.clone(), vals).map_err(|e| e.to_string())?;
            let pf = p.apply(&f).map_err(|e| e.to_string())?;
            worst_gain = worst_gain.max(pf.l1_norm() - f.l1_norm());
        }
    }
    check(
        worst_col <= COLUMN_TOL && worst_gain <= CONTRACTION_SLACK,
        format!("max |colsum-1| = {worst_col:.2e}, max (|Pf|-|f|) = {worst_gain:.2e}"),
    )
}

fn doubling_sanity() -> Outcome {
    let t = IntermittentMap::doubling(0.5).map_err(|e| e.to_string())?;
    let mesh = build_mesh(1024, 1.0).map_err(|e| e.to_string())?;
    let p = assemble_ulam(&t, mesh.clone()).map_err(|e| e.to_string())?;
    let start = PiecewiseDensity::from_fn(mesh.clone(), |x| 3.0 * x * x).map_err(|e| e.to_string())?;
    let fp = power_iterate(&p, &start, DOUBLING_TOL, DOUBLING_MAX_ITER).map_err(|e| e.to_string())?;
    let one = PiecewiseDensity::constant(mesh.clone(), 1.0);
    let dist = fp.density.sub(&one).map_err(|e| e.to_string())?.l1_norm();
    let g = PiecewiseDensity::from_fn(mesh, |x| if ((x * 1024.0) as u64).is_multiple_of(2) { 1.0 } else { -1.0 })
        .map_err(|e| e.to_string())?;
    let series = iterate_norms(&p, &g, DYADIC_MAX_ITER, 0.5).map_err(|e| e.to_string())?;
    let last = *series.norms.last().unwrap();
    check(
        dist <= DOUBLING_TOL && last < DYADIC_TOL,
        format!(
            "|h-1| = {dist:.2e} after {} steps, dyadic probe {last:.2e} after {DYADIC_MAX_ITER}",
            fp.iterations
        ),
    )
}

fn cone_and_pointwise(report: &experiment::DensityReport) -> Outcome {
    let t = IntermittentMap::lsv(0.5).map_err(|e| e.to_string())?;
    let a = bounds::a_star(0.5, t.params.c3, t.params.d).map_err(|e| e.to_string())?;
    let p = assemble_ulam(&t, report.density.mesh().clone()).map_err(|e| e.to_string())?;
    let mut worst = f64::INFINITY;
    for seed in 0..100 {
        let f = sample_cone_element(p.mesh().clone(), a, 0.5, seed).map_err(|e| e.to_string())?;
        let r = cone_ca_check(&p.apply(&f).map_err(|e| e.to_string())?, a, 0.5);
        if !r.passes_with_slack(CONE_SLACK) {
            return Err(format!("cone sample {seed} left the cone: {r:?}"));
        }
        worst = worst.min(r.cumulative_margin);
    }
    check(
        a == 8.0 && report.pointwise_ratio <= 1.0 + POINTWISE_SLACK && report.cone.passes_with_slack(CONE_SLACK),
        format!(
            "A* = {a}, worst cone margin {worst:.2e}, max h x^a / A* = {:.4}",
            report.pointwise_ratio
        ),
    )
}

fn norm_bound(report: &experiment::DensityReport) -> Outcome {
    let t = IntermittentMap::lsv(0.5).map_err(|e| e.to_string())?;
    let c = bounds::constants_report(&t, lsv_config(0.5).grid).map_err(|e| e.to_string())?;
    let m = report.m.ok_or("a_T, b_T not certifiable")?;
    check(
        report.alpha_norm <= m * (1.0 + NORM_SLACK) && c.contraction_factor < 1.0,
        format!(
            "|h|_a = {:.4} <= M = {m:.3}, a_T = {:.4}, b_T = {}, contraction {:.8}",
            report.alpha_norm, c.a_t, c.b_t, c.contraction_factor
        ),
    )
}

fn telescoping() -> Outcome {
    let t = IntermittentMap::lsv(0.5).map_err(|e| e.to_string())?;
    let fam = make_perturbed_family(&t, FamilyKind::SecondBranchBump, 1.0).map_err(|e| e.to_string())?;
    let mesh = build_mesh(1024, 4.0).map_err(|e| e.to_string())?;
    let p0 = assemble_ulam(&t, mesh.clone()).map_err(|e| e.to_string())?;
    let p1 = assemble_ulam(&fam.generate(0.08).map_err(|e| e.to_string())?, mesh.clone()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let vals: Vec<f64> = (0..1024).map(|_| rng.gen_range(0.0..1.0)).collect();
        let f = PiecewiseDensity::new(mesh.clone(), vals).map_err(|e| e.to_string())?;
        let f = f.scaled(1.0 / f.integral());
        worst = worst.max(telescoping_residual(&p0, &p1, &f, 20).map_err(|e| e.to_string())?);
    }
    check(worst <= TELESCOPING_TOL, format!("max residual {worst:.2e} at N = 20"))
}

fn decay() -> Outcome {
    let r = experiment::run_equilibrium(&lsv_config(0.5)).map_err(|e| e.to_string())?;
    let fit = r.envelope_fit.ok_or("envelope fit failed")?;
    check(
        r.regime == Regime::PowerLaw && fit.exponent < 0.0 && fit.rms_residual < DECAY_RMS,
        format!(
            "envelope slope {:.3}, rms {:.3}, C_phi = {:.4}",
            fit.exponent, fit.rms_residual, r.rate_model.c_phi
        ),
    )
}

fn stability(run: &StabilityRun) -> Outcome {
    let fit = run.fit.ok_or("power-law fit failed")?;
    let rows: Vec<String> = run
        .rows
        .iter()
        .map(|r| format!("{:.2e}<={:.2e}", r.l1_distance, r.bound))
        .collect();
    check(
        run.bounds_passed && fit.exponent >= run.holder_exponent - SLOPE_TOLERANCE,
        format!(
            "slope {:.3} vs exponent {:.4}, distances {}",
            fit.exponent,
            run.holder_exponent,
            rows.join(" ")
        ),
    )
}

mod oracle {
    use super::*;

    const P: usize = 256;
    const RM: RoundingMode = RoundingMode::ToEven;

    fn big(x: f64) -> BigFloat {
        BigFloat::from_f64(x, P)
    }

    fn to_f64(x: &BigFloat) -> f64 {
        let mut cc = Consts::new().unwrap();
        x.format(astro_float::Radix::Dec, RM, &mut cc).unwrap().parse().unwrap()
    }

    fn pow(x: &BigFloat, y: &BigFloat) -> BigFloat {
        let mut cc = Consts::new().unwrap();
        x.pow(y, P, RM, &mut cc)
    }

    pub fn a_star(alpha: f64, d: f64) -> f64 {
        let one = big(1.0);
        let c3 = pow(&big(2.0), &big(alpha));
        let den = one
            .sub(&big(alpha), P, RM)
            .mul(&c3, P, RM)
            .mul(&pow(&big(d), &big(2.0).add(&big(alpha), P, RM)), P, RM);
        to_f64(&one.div(&den, P, RM))
    }

    pub fn holder(alpha: f64, gamma: f64) -> f64 {
        let one = big(1.0);
        let r = big(gamma).div(&big(2.0), P, RM).mul(&one.sub(&big(alpha), P, RM), P, RM);
        to_f64(&r.div(&r.add(&one, P, RM), P, RM))
    }

    pub fn psi_inverse(c_phi: f64, a: f64, eps: f64) -> f64 {
        let one = big(1.0);
        let e = one.div(&big(a).add(&one, P, RM), P, RM);
        to_f64(&pow(&big(c_phi).div(&big(eps), P, RM), &e))
    }

    pub fn sqrt2() -> f64 {
        to_f64(&pow(&big(2.0), &big(0.5)))
    }
}

fn pinned_values() -> Outcome {
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let t = IntermittentMap::lsv(0.5).map_err(|e| e.to_string())?;
    let c = bounds::constants_report(&t, lsv_config(0.5).grid).map_err(|e| e.to_string())?;
    let holder = bounds::holder_exponent(0.5, 0.9).map_err(|e| e.to_string())?;
    let rm = RateModel::new(1.0, 0.225).map_err(|e| e.to_string())?;
    let n = rm.psi_inverse(1e-3).map_err(|e| e.to_string())?;
    let pairs = [
        ("A*", c.a_star, oracle::a_star(0.5, 0.5)),
        ("C", c.c_big, 2.5),
        ("K_T", c.k_t, oracle::sqrt2()),
        ("c_T", c.c_t, 2.5),
        ("holder", holder, oracle::holder(0.5, 0.9)),
        ("psi^-1", n, oracle::psi_inverse(1.0, 0.225, 1e-3)),
    ];
    let worst = pairs.iter().map(|&(_, a, b)| rel(a, b)).fold(0.0, f64::max);
    let text: Vec<String> = pairs.iter().map(|(k, a, _)| format!("{k}={a:.10}")).collect();
    check(worst <= ORACLE_REL, format!("{}, max rel err {worst:.1e}", text.join(" ")))
}

fn determinism(reference: &StabilityRun) -> Outcome {
    let cfg = stability_config();
    let expected = reference.csv();
    for threads in [1, 2, 8] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| e.to_string())?;
        let run = pool.install(|| experiment::run_stability(&cfg)).map_err(|e| e.to_string())?;
        if run.csv() != expected {
            return Err(format!("CSV differs with {threads} threads"));
        }
    }
    check(true, format!("{} bytes identical for 1, 2, 8 threads", expected.len()))
}

fn report(index: usize, name: &str, started: Instant, outcome: Outcome) -> bool {
    let secs = started.elapsed().as_secs_f64();
    let (tag, detail, ok) = match outcome {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("{tag} {index} {name}: {detail} [{secs:.1}s]");
    ok
}

fn main() -> ExitCode {
    let mut ok = true;

    let s = Instant::now();
    ok &= report(1, "column sums and L1 contraction", s, operator_sanity());
    let s = Instant::now();
    ok &= report(2, "doubling map convergence", s, doubling_sanity());

    let s = Instant::now();
    let density = experiment::run_density(&lsv_config(0.5));
    let density_secs = s.elapsed();
    match density {
        Ok(d) => {
            let s = Instant::now() - density_secs;
            ok &= report(3, "cone invariance and pointwise bound", s, cone_and_pointwise(&d));
            let s = Instant::now();
            ok &= report(4, "strong norm bound", s, norm_bound(&d));
        }
        Err(e) => {
            ok &= report(3, "cone invariance and pointwise bound", s, Err(e.to_string()));
            ok &= report(4, "strong norm bound", s, Err(e.to_string()));
        }
    }

    let s = Instant::now();
    ok &= report(5, "telescoping identity", s, telescoping());
    let s = Instant::now();
    ok &= report(6, "polynomial decay", s, decay());

    let s = Instant::now();
    let run = experiment::run_stability(&stability_config());
    match &run {
        Ok(r) => ok &= report(7, "Hölder stability", s, stability(r)),
        Err(e) => ok &= report(7, "Hölder stability", s, Err(e.to_string())),
    }

    let s = Instant::now();
    ok &= report(8, "pinned values against high precision", s, pinned_values());

    let s = Instant::now();
    match &run {
        Ok(r) => ok &= report(9, "thread-count determinism", s, determinism(r)),
        Err(e) => ok &= report(9, "thread-count determinism", s, Err(e.to_string())),
    }

    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! One function per subcommand. Each writes its report document and CSV
//! tables into the run's output directory.

use std::path::Path;

use nalgebra::DVector;
use pstab_core::config::RunConfig;
use pstab_core::control::{K0Choice, LocalizationSpec, StabilizationReport, Stabilizer};
use pstab_core::error::{Error, Result};
use pstab_core::periodic::{solve_k_approx_periodic, PeriodicSolveReport, PeriodicityClass};
use pstab_core::report::{create_file, write_csv_rows, write_json};
use pstab_core::scenarios::{check_eigenvalue_bound, nonexistence_demo, BoundReport, Section3Report};
use pstab_core::spectral::gram_matrix;
use pstab_core::evolution::{Evolver, PerturbationBudget};
use serde::Serialize;

pub const SWEEP_COLUMNS: [&str; 12] = [
    "epsilon",
    "m_E",
    "K0",
    "norm_u",
    "norm_u_sq",
    "residual",
    "sup_dev_sq",
    "dissipation_dev",
    "ratio_17",
    "ratio_18",
    "cond_Jstar",
    "sigma_min_Jstar",
];

#[derive(Serialize)]
struct EigDoc {
    n_dof: usize,
    weight: f64,
    eigenvalues: Vec<f64>,
    orthonormality_defect: f64,
    max_relative_residual: f64,
}

pub fn eig(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let r = cfg.resolve()?;
    let n = r.basis.len();
    let max_relative_residual = (0..n)
        .map(|j| r.basis.residual(&r.op, j) / r.basis.eigenvalue(j).abs().max(1.0))
        .fold(0.0, f64::max);
    if cfg.wants("json") {
        write_json(
            &dir.join("eig.json"),
            &EigDoc {
                n_dof: n,
                weight: r.basis.weight(),
                eigenvalues: r.basis.eigenvalues().as_slice().to_vec(),
                orthonormality_defect: r.basis.orthonormality_defect(),
                max_relative_residual,
            },
        )?;
    }
    if cfg.wants("csv") {
        r.basis.write_csv(create_file(&dir.join("eigenbasis.csv"))?)?;
        let rows: Vec<Vec<f64>> = (0..n).map(|j| vec![(j + 1) as f64, r.basis.eigenvalue(j)]).collect();
        write_csv_rows(create_file(&dir.join("spectrum.csv"))?, &["j", "lambda_j"], &rows)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PeriodicDoc<'a> {
    k: usize,
    steps: usize,
    dt: f64,
    solve: &'a PeriodicSolveReport,
}

pub fn periodic(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let r = cfg.resolve()?;
    let d = r.op.domain();
    let ev = Evolver::new(&r.op, &r.basis, r.e.sample(d, &r.grid)?, r.grid)?;
    let forcing = r.f.sample(d, &r.grid)?;
    let pm = ev.period_map(&forcing)?;
    let pc = PeriodicityClass::zero_head(cfg.solve.k);
    let report = solve_k_approx_periodic(&ev, &forcing, &pm, &pc, &r.solve)?;
    if cfg.wants("json") {
        let doc = PeriodicDoc {
            k: cfg.solve.k,
            steps: r.grid.steps(),
            dt: r.grid.dt(),
            solve: &report,
        };
        write_json(&dir.join("periodic.json"), &doc)?;
    }
    if cfg.wants("csv") {
        report
            .trajectory
            .write_csv(&r.op, &r.basis, create_file(&dir.join("trajectory.csv"))?)?;
    }
    Ok(())
}

pub fn stabilize(cfg: &RunConfig, dir: &Path, local: bool) -> Result<()> {
    let r = cfg.resolve()?;
    let stab = Stabilizer::new(&r.op, &r.basis, &r.e, &r.f, r.grid, r.q, r.k0, r.solve)?;
    let report = if local {
        let loc = cfg.localization(r.op.domain(), &r.grid)?;
        stab.synthesize_local(&loc)?
    } else {
        stab.synthesize()?
    };
    write_stabilization(cfg, dir, if local { "stabilize-local" } else { "stabilize" }, &r, &report)
}

fn write_stabilization(
    cfg: &RunConfig,
    dir: &Path,
    stem: &str,
    r: &pstab_core::config::Resolved,
    report: &StabilizationReport,
) -> Result<()> {
    if cfg.wants("json") {
        write_json(&dir.join(format!("{stem}.json")), report)?;
    }
    if cfg.wants("csv") {
        report
            .trajectory
            .write_csv(&r.op, &r.basis, create_file(&dir.join("trajectory.csv"))?)?;
        let rows: Vec<Vec<f64>> = report
            .control
            .iter()
            .enumerate()
            .map(|(j, &u)| vec![(j + 1) as f64, u])
            .collect();
        write_csv_rows(create_file(&dir.join("control.csv"))?, &["j", "u_j"], &rows)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct GramDoc {
    k: usize,
    omega_nodes: usize,
    matrix: Vec<Vec<f64>>,
    min_eigenvalue: f64,
    positive_definite: bool,
}

/// Head size used when `K0` is automatic.
const DEFAULT_GRAM_K: usize = 8;

pub fn gram(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let r = cfg.resolve()?;
    let k = match r.k0 {
        K0Choice::Fixed(k) => k,
        K0Choice::Auto { .. } => DEFAULT_GRAM_K.min(r.basis.len()),
    };
    let omega = cfg.omega(r.op.domain())?;
    let g = gram_matrix(&r.basis, &omega, k)?;
    let matrix: Vec<Vec<f64>> = g.matrix.row_iter().map(|row| row.iter().copied().collect()).collect();
    if cfg.wants("json") {
        let doc = GramDoc {
            k,
            omega_nodes: omega.count(),
            matrix: matrix.clone(),
            min_eigenvalue: g.min_eigenvalue,
            positive_definite: g.min_eigenvalue > 0.0,
        };
        write_json(&dir.join("gram.json"), &doc)?;
    }
    if cfg.wants("csv") {
        let header: Vec<String> = (1..=k).map(|j| format!("X_{j}")).collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv_rows(create_file(&dir.join("gram.csv"))?, &header, &matrix)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Example3Doc<'a> {
    bound: &'a BoundReport,
    dichotomy: &'a Section3Report,
    stabilization: Option<&'a StabilizationReport>,
}

pub fn example3(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let r = cfg.resolve()?;
    let steady = r.e_steady.as_ref().ok_or_else(|| Error::Config {
        path: "perturbation.expr".into(),
        message: "this command needs a time-independent perturbation".into(),
    })?;
    if r.op.domain().is_rectangle() {
        return Err(Error::Config {
            path: "domain".into(),
            message: "this command runs on intervals only".into(),
        });
    }
    // The example subtracts e from the operator; the config adds it.
    let e3: DVector<f64> = -steady;
    let bound = check_eigenvalue_bound(&r.op, &e3)?;
    let demo = nonexistence_demo(&r.op, &e3, &r.f, r.grid, cfg.solve.defect_tol)?;
    let stab = match &cfg.control {
        Some(_) => Some(Stabilizer::new(&r.op, &r.basis, &r.e, &r.f, r.grid, r.q, r.k0, r.solve)?.synthesize()?),
        None => None,
    };
    if cfg.wants("json") {
        let doc = Example3Doc {
            bound: &bound,
            dichotomy: &demo,
            stabilization: stab.as_ref(),
        };
        write_json(&dir.join("example3.json"), &doc)?;
    }
    if cfg.wants("csv") {
        let d = r.op.domain();
        let rows: Vec<Vec<f64>> = demo
            .phi_e
            .iter()
            .enumerate()
            .map(|(p, &v)| vec![d.node(p).0, v])
            .collect();
        write_csv_rows(create_file(&dir.join("phi_e.csv"))?, &["x", "phi_e"], &rows)?;
        if let Some(s) = &stab {
            s.trajectory.write_csv(&r.op, &r.basis, create_file(&dir.join("trajectory.csv"))?)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepRun {
    scale: f64,
    budget: PerturbationBudget,
    report: StabilizationReport,
}

#[derive(Serialize)]
struct SweepDoc {
    runs: Vec<SweepRun>,
    /// Least-squares slope of `log ‖u‖` against `log ε` (global runs).
    slope_log_u: Option<f64>,
    /// `max / min` of the deviation ratio over the runs.
    ratio_17_spread: Option<f64>,
    /// `max / min` of `‖u‖·m(E)` over the localized runs.
    u_m_e_spread: Option<f64>,
}

pub fn sweep(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let scales = if cfg.sweep.scales.is_empty() { vec![1.0] } else { cfg.sweep.scales.clone() };
    let measures: Vec<Option<f64>> = if cfg.sweep.m_e.is_empty() {
        vec![None]
    } else {
        cfg.sweep.m_e.iter().copied().map(Some).collect()
    };
    let mut runs = Vec::new();
    for &s in &scales {
        let mut c = cfg.clone();
        c.perturbation.scale *= s;
        let r = c.resolve()?;
        let stab = Stabilizer::new(&r.op, &r.basis, &r.e, &r.f, r.grid, r.q, r.k0, r.solve)?;
        for m in &measures {
            let report = match m {
                None => stab.synthesize()?,
                Some(m) => {
                    let loc = LocalizationSpec::new(cfg.omega(r.op.domain())?, &[(0.0, *m)], &r.grid)?;
                    stab.synthesize_local(&loc)?
                }
            };
            runs.push(SweepRun {
                scale: c.perturbation.scale,
                budget: report.budget,
                report,
            });
        }
    }
    let rows: Vec<Vec<f64>> = runs.iter().map(|run| sweep_row(&run.report)).collect();
    if cfg.wants("csv") {
        write_csv_rows(create_file(&dir.join("sweep.csv"))?, &SWEEP_COLUMNS, &rows)?;
    }
    if cfg.wants("json") {
        let global: Vec<(f64, f64)> = runs
            .iter()
            .filter(|r| r.report.m_e.is_none())
            .map(|r| (r.budget.epsilon, r.report.norm_u))
            .collect();
        let doc = SweepDoc {
            slope_log_u: loglog_slope(&global),
            ratio_17_spread: spread(runs.iter().filter_map(|r| r.report.ratio_17)),
            u_m_e_spread: spread(runs.iter().filter_map(|r| r.report.norm_u_times_m_e)),
            runs,
        };
        write_json(&dir.join("sweep.json"), &doc)?;
    }
    Ok(())
}

fn sweep_row(r: &StabilizationReport) -> Vec<f64> {
    vec![
        r.budget.epsilon,
        r.m_e.unwrap_or(f64::NAN),
        r.k0 as f64,
        r.norm_u,
        r.norm_u_sq,
        r.residual,
        r.deviation.sup_norm_sq,
        r.deviation.dissipation,
        r.ratio_17.unwrap_or(f64::NAN),
        r.ratio_18.unwrap_or(f64::NAN),
        r.control_map.condition_number,
        r.control_map.sigma_min,
    ]
}

fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn spread(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return None;
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    Some(max / min)
}

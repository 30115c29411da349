//! Browser bindings: three small experiments on the resonant operator
//! `−d²/dx² − 1` on `(0, π)`, each returning a JSON string.
//!
//! The `*_json` functions are plain Rust so they can be tested natively;
//! the `#[wasm_bindgen]` wrappers only convert errors.

use std::f64::consts::PI;

use pstab_core::config::parse_config;
use pstab_core::control::{LocalizationSpec, Stabilizer};
use pstab_core::scenarios::section3_operator;
use pstab_core::{eigendecompose, gram_matrix, Subdomain};
use serde_json::json;
use wasm_bindgen::prelude::*;

const MAX_N: usize = 400;

fn check_n(n: usize) -> Result<(), String> {
    if !(8..=MAX_N).contains(&n) {
        return Err(format!("n must lie in 8..={MAX_N}, got {n}"));
    }
    Ok(())
}

/// First `count` eigenpairs on an `n`-node grid, with node positions.
pub fn spectrum_json(n: usize, count: usize) -> Result<String, String> {
    check_n(n)?;
    let op = section3_operator(n).map_err(|e| e.to_string())?;
    let b = eigendecompose(&op).map_err(|e| e.to_string())?;
    let count = count.clamp(1, n);
    let x: Vec<f64> = op.domain().nodes().map(|(x, _)| x).collect();
    let modes: Vec<Vec<f64>> = (0..count).map(|j| b.vector(j).as_slice().to_vec()).collect();
    let exact: Vec<f64> = (1..=count).map(|j| (j * j) as f64 - 1.0).collect();
    Ok(json!({
        "x": x,
        "eigenvalues": &b.eigenvalues().as_slice()[..count],
        "exact": exact,
        "modes": modes,
    })
    .to_string())
}

/// Gram matrix of the first `k` eigenfunctions on `ω = (lo, hi)`.
pub fn gram_json(n: usize, lo: f64, hi: f64, k: usize) -> Result<String, String> {
    check_n(n)?;
    let op = section3_operator(n).map_err(|e| e.to_string())?;
    let b = eigendecompose(&op).map_err(|e| e.to_string())?;
    let omega = Subdomain::from_intervals(op.domain(), &[(lo, hi)]).map_err(|e| e.to_string())?;
    let g = gram_matrix(&b, &omega, k.clamp(1, 8)).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<f64>> = g.matrix.row_iter().map(|r| r.iter().copied().collect()).collect();
    Ok(json!({
        "matrix": rows,
        "min_eigenvalue": g.min_eigenvalue,
        "nodes": omega.count(),
    })
    .to_string())
}

/// Localized stabilization with `e = scale·cos x`, `f = sin 2x`,
/// `ω = (0, omega_hi)` and `E = [0, m_e]`.
pub fn stabilize_json(n: usize, scale: f64, omega_hi: f64, m_e: f64) -> Result<String, String> {
    check_n(n)?;
    if !(omega_hi > 0.0 && omega_hi <= PI) {
        return Err(format!("omega must end inside (0, π], got {omega_hi}"));
    }
    let src = format!(
        "name = \"demo\"\n\
         [domain]\nx = [0, \"pi\"]\nn = {n}\n\
         [operator]\nc = -1\nshift = \"first-eigenvalue\"\n\
         [perturbation]\nexpr = \"cos(x)\"\nscale = {scale:?}\n\
         [forcing]\nexpr = \"sin(2*x)\"\n\
         [control]\nK0 = \"auto\"\nomega = [[0, {omega_hi:?}]]\nE = [[0, {m_e:?}]]\n"
    );
    let cfg = parse_config(&src).map_err(|e| e.to_string())?;
    let r = cfg.resolve().map_err(|e| e.to_string())?;
    let stab = Stabilizer::new(&r.op, &r.basis, &r.e, &r.f, r.grid, r.q, r.k0, r.solve).map_err(|e| e.to_string())?;
    let omega = cfg.omega(r.op.domain()).map_err(|e| e.to_string())?;
    let loc = LocalizationSpec::new(omega, &[(0.0, m_e)], &r.grid).map_err(|e| e.to_string())?;
    let rep = stab.synthesize_local(&loc).map_err(|e| e.to_string())?;

    // thin the time series to at most ~200 samples
    let m = r.grid.steps();
    let stride = m.div_ceil(200).max(1);
    let ks: Vec<usize> = (0..=m).step_by(stride).chain(std::iter::once(m)).collect();
    let mut ks = ks;
    ks.dedup();
    let t: Vec<f64> = ks.iter().map(|&k| r.grid.time(k)).collect();
    let norm = |traj: &pstab_core::Trajectory| -> Vec<f64> { ks.iter().map(|&k| traj.state(k).norm()).collect() };
    let head = |traj: &pstab_core::Trajectory, j: usize| -> Vec<f64> { ks.iter().map(|&k| traj.state(k)[j]).collect() };
    Ok(json!({
        "k0": rep.k0,
        "control": rep.control.as_slice(),
        "residual": rep.residual,
        "residual_tolerance": rep.residual_tolerance,
        "epsilon": rep.budget.epsilon,
        "norm_u": rep.norm_u,
        "norm_u_times_m_e": rep.norm_u_times_m_e,
        "cond_jstar": rep.control_map.condition_number,
        "t": t,
        "norm_y": norm(&rep.trajectory),
        "norm_y_ref": norm(&rep.reference),
        "y1": head(&rep.trajectory, 0),
        "y1_ref": head(&rep.reference, 0),
    })
    .to_string())
}

#[wasm_bindgen]
pub fn spectrum(n: usize, count: usize) -> Result<String, JsError> {
    spectrum_json(n, count).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn gram(n: usize, lo: f64, hi: f64, k: usize) -> Result<String, JsError> {
    gram_json(n, lo, hi, k).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn stabilize(n: usize, scale: f64, omega_hi: f64, m_e: f64) -> Result<String, JsError> {
    stabilize_json(n, scale, omega_hi, m_e).map_err(|e| JsError::new(&e))
}

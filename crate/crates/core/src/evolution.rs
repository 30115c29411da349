//! Crank–Nicolson evolution of `y' + (A + E(t)) y = F(t)` and the affine
//! period map `y(T) = P·y(0) + q`.
//!
//! Time stepping happens in grid coordinates; trajectories and period maps
//! are reported in modal coordinates of an [`EigenBasis`]. The multiplication
//! by `e(·, t)` and the forcing are both evaluated at the half step
//! `t_{k+1/2}`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::banded::BandLdl;
use crate::error::{Error, Result};
use crate::field::{SampledField, SpaceTimeField};
use crate::report::fmt_num;
use crate::spectral::{DiscreteOperator, DomainSpec, EigenBasis};
use crate::time::TimeGrid;

/// Modal coefficients `y_j(t_k)`: column `k` holds the state at `t_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    coeffs: DMatrix<f64>,
    grid: TimeGrid,
}

impl Trajectory {
    pub fn new(coeffs: DMatrix<f64>, grid: TimeGrid) -> Result<Self> {
        if coeffs.ncols() != grid.steps() + 1 {
            return Err(Error::DimensionMismatch {
                expected: grid.steps() + 1,
                found: coeffs.ncols(),
            });
        }
        Ok(Self { coeffs, grid })
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn n_modes(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn state(&self, k: usize) -> DVector<f64> {
        self.coeffs.column(k).clone_owned()
    }

    pub fn initial(&self) -> DVector<f64> {
        self.state(0)
    }

    pub fn terminal(&self) -> DVector<f64> {
        self.state(self.grid.steps())
    }

    pub fn grid_values(&self, basis: &EigenBasis, k: usize) -> Result<DVector<f64>> {
        basis.reconstruct(&self.state(k))
    }

    /// Same data with the time axis reversed.
    pub fn reversed(&self) -> Self {
        let m = self.coeffs.ncols();
        Self {
            coeffs: DMatrix::from_fn(self.coeffs.nrows(), m, |r, c| self.coeffs[(r, m - 1 - c)]),
            grid: self.grid,
        }
    }

    pub fn minus(&self, other: &Trajectory) -> Result<Self> {
        if self.coeffs.shape() != other.coeffs.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.coeffs.ncols(),
                found: other.coeffs.ncols(),
            });
        }
        Ok(Self {
            coeffs: &self.coeffs - &other.coeffs,
            grid: self.grid,
        })
    }

    /// Rows `t, y_1..y_16, norm_sq, grad_norm_sq`.
    pub fn write_csv<W: Write>(&self, op: &DiscreteOperator, basis: &EigenBasis, mut w: W) -> Result<()> {
        let shown = self.n_modes().min(16);
        write!(w, "t")?;
        for j in 1..=shown {
            write!(w, ",y_{j}")?;
        }
        writeln!(w, ",norm_sq,grad_norm_sq")?;
        for k in 0..=self.grid.steps() {
            let s = self.coeffs.column(k);
            write!(w, "{}", fmt_num(self.grid.time(k)))?;
            for j in 0..shown {
                write!(w, ",{}", fmt_num(s[j]))?;
            }
            let grid = basis.reconstruct(&s.clone_owned())?;
            writeln!(
                w,
                ",{},{}",
                fmt_num(s.norm_squared()),
                fmt_num(op.dirichlet_energy(grid.as_slice()))
            )?;
        }
        Ok(())
    }
}

/// Crank–Nicolson stepper for a fixed operator, perturbation and time grid.
/// Step matrices are factored once and reused across every evolution.
pub struct Evolver<'a> {
    op: &'a DiscreteOperator,
    basis: &'a EigenBasis,
    grid: TimeGrid,
    e: SampledField,
    factors: Vec<BandLdl>,
}

impl<'a> Evolver<'a> {
    pub fn new(
        op: &'a DiscreteOperator,
        basis: &'a EigenBasis,
        e: SampledField,
        grid: TimeGrid,
    ) -> Result<Self> {
        let n = op.n_dof();
        if basis.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: basis.len(),
            });
        }
        e.check_len(n, grid.steps())?;
        let half = 0.5 * grid.dt();
        let factor = |k: usize, ek: Option<&DVector<f64>>| -> Result<BandLdl> {
            op.band()
                .shifted(half, |i| 1.0 + ek.map_or(0.0, |v| half * v[i]))
                .factor()
                .map_err(|err| match err {
                    Error::SingularStep { pivot, .. } => Error::SingularStep { step: k, pivot },
                    other => other,
                })
        };
        let factors = match &e {
            SampledField::Zero => vec![factor(0, None)?],
            SampledField::Steady(v) => vec![factor(0, Some(v))?],
            SampledField::Unsteady(vs) => vs
                .iter()
                .enumerate()
                .map(|(k, v)| factor(k, Some(v)))
                .collect::<Result<_>>()?,
        };
        Ok(Self {
            op,
            basis,
            grid,
            e,
            factors,
        })
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn basis(&self) -> &EigenBasis {
        self.basis
    }

    pub fn operator(&self) -> &DiscreteOperator {
        self.op
    }

    pub fn perturbation(&self) -> &SampledField {
        &self.e
    }

    fn step(&self, k: usize, y: &mut [f64], forcing: Option<&DVector<f64>>, scratch: &mut [f64]) {
        let half = 0.5 * self.grid.dt();
        self.op.band().apply_affine(-half, 1.0, y, scratch);
        if let Some(ek) = self.e.at(k) {
            for i in 0..y.len() {
                scratch[i] -= half * ek[i] * y[i];
            }
        }
        if let Some(fk) = forcing {
            let dt = self.grid.dt();
            for i in 0..y.len() {
                scratch[i] += dt * fk[i];
            }
        }
        let ldl = if self.factors.len() == 1 {
            &self.factors[0]
        } else {
            &self.factors[k]
        };
        ldl.solve_in_place(scratch);
        y.copy_from_slice(scratch);
    }

    fn check_forcing(&self, forcing: &SampledField) -> Result<()> {
        forcing.check_len(self.op.n_dof(), self.grid.steps())
    }

    /// Grid state at `T` starting from grid state `y0`.
    pub fn terminal_grid(&self, forcing: &SampledField, y0: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_forcing(forcing)?;
        let mut y = y0.as_slice().to_vec();
        let mut scratch = vec![0.0; y.len()];
        for k in 0..self.grid.steps() {
            self.step(k, &mut y, forcing.at(k), &mut scratch);
        }
        Ok(DVector::from_vec(y))
    }

    /// Modal state at `T` starting from modal state `y0`.
    pub fn terminal(&self, forcing: &SampledField, y0: &DVector<f64>) -> Result<DVector<f64>> {
        let g = self.basis.reconstruct(y0)?;
        self.basis.project(&self.terminal_grid(forcing, &g)?)
    }

    /// Full trajectory from modal initial data `y0`.
    pub fn run(&self, forcing: &SampledField, y0: &DVector<f64>) -> Result<Trajectory> {
        self.check_forcing(forcing)?;
        let m = self.grid.steps();
        let mut coeffs = DMatrix::zeros(self.basis.len(), m + 1);
        coeffs.set_column(0, y0);
        let mut y = self.basis.reconstruct(y0)?.as_slice().to_vec();
        let mut scratch = vec![0.0; y.len()];
        for k in 0..m {
            self.step(k, &mut y, forcing.at(k), &mut scratch);
            let grid = DVector::from_column_slice(&y);
            coeffs.set_column(k + 1, &self.basis.project(&grid)?);
        }
        Trajectory::new(coeffs, self.grid)
    }

    /// Affine period map: `P` from unforced evolutions of each basis vector,
    /// `q` from the forced evolution of zero data.
    pub fn period_map(&self, forcing: &SampledField) -> Result<PeriodMap> {
        let p = self.homogeneous_map()?;
        let offset = self.offset(forcing)?;
        Ok(PeriodMap {
            p,
            offset,
            dt: self.grid.dt(),
            period: self.grid.period(),
        })
    }

    /// `q = y(T)` for zero initial data under `forcing`.
    pub fn offset(&self, forcing: &SampledField) -> Result<DVector<f64>> {
        let n = self.basis.len();
        if forcing.is_zero() {
            return Ok(DVector::zeros(n));
        }
        self.terminal(forcing, &DVector::zeros(n))
    }

    /// Modal matrix of the unforced one-period propagator.
    pub fn homogeneous_map(&self) -> Result<DMatrix<f64>> {
        let n = self.basis.len();
        let zero = SampledField::Zero;
        let columns = map_indices(n, |j| {
            self.terminal_grid(&zero, &self.basis.vector(j))
                .and_then(|g| self.basis.project(&g))
        })?;
        Ok(DMatrix::from_columns(&columns))
    }
}

#[cfg(feature = "parallel")]
pub(crate) fn map_indices<T: Send>(
    n: usize,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indices<T>(n: usize, f: impl Fn(usize) -> Result<T>) -> Result<Vec<T>> {
    (0..n).map(f).collect()
}

/// `y(T) = P·y(0) + q` in modal coordinates for the discrete scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodMap {
    #[serde(skip)]
    pub p: DMatrix<f64>,
    #[serde(skip)]
    pub offset: DVector<f64>,
    pub dt: f64,
    pub period: f64,
}

impl PeriodMap {
    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn apply(&self, y0: &DVector<f64>) -> DVector<f64> {
        &self.p * y0 + &self.offset
    }

    /// Same propagator with a different offset (another forcing).
    pub fn with_offset(&self, offset: DVector<f64>) -> Self {
        Self {
            offset,
            ..self.clone()
        }
    }
}

/// Evolves from modal data `y0` under `e`, `f` and an optional additive control.
pub fn evolve(
    op: &DiscreteOperator,
    basis: &EigenBasis,
    e: &SpaceTimeField,
    f: &SpaceTimeField,
    control: Option<&SpaceTimeField>,
    y0: &DVector<f64>,
    grid: &TimeGrid,
) -> Result<Trajectory> {
    let d = op.domain();
    let ev = Evolver::new(op, basis, e.sample(d, grid)?, *grid)?;
    let mut forcing = f.sample(d, grid)?;
    if let Some(u) = control {
        forcing = forcing.plus(&u.sample(d, grid)?);
    }
    ev.run(&forcing, y0)
}

pub fn period_map(
    op: &DiscreteOperator,
    basis: &EigenBasis,
    e: &SpaceTimeField,
    f: &SpaceTimeField,
    grid: &TimeGrid,
) -> Result<PeriodMap> {
    let d = op.domain();
    let ev = Evolver::new(op, basis, e.sample(d, grid)?, *grid)?;
    ev.period_map(&f.sample(d, grid)?)
}

/// `sup_k ‖y(t_k)‖²` and the trapezoidal time integral of the Dirichlet energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyNorms {
    pub sup_norm_sq: f64,
    pub dissipation: f64,
}

impl EnergyNorms {
    pub fn total(&self) -> f64 {
        self.sup_norm_sq + self.dissipation
    }
}

pub fn energy_norms(traj: &Trajectory, op: &DiscreteOperator, basis: &EigenBasis) -> Result<EnergyNorms> {
    let m = traj.grid.steps();
    let dt = traj.grid.dt();
    let mut sup = 0.0f64;
    let mut diss = 0.0;
    for k in 0..=m {
        let s = traj.coeffs.column(k).clone_owned();
        sup = sup.max(s.norm_squared());
        let g = basis.reconstruct(&s)?;
        let w = if k == 0 || k == m { 0.5 } else { 1.0 };
        diss += w * dt * op.dirichlet_energy(g.as_slice());
    }
    Ok(EnergyNorms {
        sup_norm_sq: sup,
        dissipation: diss,
    })
}

/// Discrete `L^∞(0,T; L^q(Ω))` size of a perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerturbationBudget {
    pub q: f64,
    pub epsilon: f64,
    /// Cap `M` of the admissible class; fixed at 1.
    pub cap: f64,
}

impl PerturbationBudget {
    pub fn within_cap(&self) -> bool {
        self.epsilon <= self.cap
    }
}

pub fn check_exponent(q: f64, dim: usize) -> Result<()> {
    let min = (dim as f64).max(2.0);
    if !(q > min) || !q.is_finite() {
        return Err(Error::BadExponent { q, min });
    }
    Ok(())
}

/// `ε = max_k ‖e(·, t_k)‖_{L^q}` over the grid times `t_0..t_m`.
///
/// Fields that can be evaluated anywhere are integrated with the trapezoid
/// rule over the closed grid (boundary nodes included), so a constant `c`
/// on `(0, π)` has norm exactly `c·π^{1/q}`. Fields known only on interior
/// nodes use the interior weights.
pub fn perturbation_norm(
    e: &SpaceTimeField,
    q: f64,
    grid: &TimeGrid,
    domain: &DomainSpec,
) -> Result<PerturbationBudget> {
    check_exponent(q, domain.dim())?;
    let times: Vec<usize> = if e.is_time_dependent() {
        (0..=grid.steps()).collect()
    } else {
        vec![0]
    };
    let closed = closed_grid(domain);
    let mut eps = 0.0f64;
    for k in times {
        let t = grid.time(k);
        let norm = if e.eval_point(domain.x.0, domain.y.map(|r| r.0), t).is_some() {
            let mut acc = 0.0;
            for &(x, y, w) in &closed {
                let v = e.eval_point(x, y, t).expect("pointwise source")?;
                acc += w * v.abs().powf(q);
            }
            acc.powf(1.0 / q)
        } else {
            lq_norm(&e.sample_at(domain, t)?, q, domain.weight())
        };
        eps = eps.max(norm);
    }
    Ok(PerturbationBudget {
        q,
        epsilon: eps,
        cap: 1.0,
    })
}

/// Nodes of the closed grid with tensor trapezoid weights.
fn closed_grid(domain: &DomainSpec) -> Vec<(f64, Option<f64>, f64)> {
    let n = domain.n;
    let axis = |lo: f64, h: f64| -> Vec<(f64, f64)> {
        (0..=n + 1)
            .map(|i| {
                let w = if i == 0 || i == n + 1 { 0.5 * h } else { h };
                (lo + i as f64 * h, w)
            })
            .collect()
    };
    let xs = axis(domain.x.0, domain.hx());
    match domain.y {
        None => xs.into_iter().map(|(x, w)| (x, None, w)).collect(),
        Some((y0, _)) => {
            let ys = axis(y0, domain.hy());
            ys.iter()
                .flat_map(|&(y, wy)| xs.iter().map(move |&(x, wx)| (x, Some(y), wx * wy)))
                .collect()
        }
    }
}

fn lq_norm(v: &DVector<f64>, q: f64, w: f64) -> f64 {
    (v.iter().map(|x| x.abs().powf(q)).sum::<f64>() * w).powf(1.0 / q)
}

/// `∫_Q f² dx dt` by the midpoint rule on the half-step samples.
pub fn forcing_norm_sq(f: &SampledField, grid: &TimeGrid, weight: f64) -> f64 {
    let dt = grid.dt();
    match f {
        SampledField::Zero => 0.0,
        SampledField::Steady(v) => v.norm_squared() * weight * grid.period(),
        SampledField::Unsteady(vs) => vs.iter().map(|v| v.norm_squared()).sum::<f64>() * weight * dt,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::SpatialField;
    use crate::spectral::{build_operator, eigendecompose, OperatorSpec};
    use std::f64::consts::PI;

    fn unit_laplacian(n: usize) -> (DiscreteOperator, EigenBasis) {
        let d = DomainSpec::interval(0.0, 1.0, n).unwrap();
        let op = build_operator(&d, &OperatorSpec::laplacian(0.0)).unwrap();
        let b = eigendecompose(&op).unwrap();
        (op, b)
    }

    #[test]
    fn unforced_mode_decays_exponentially() {
        let (op, b) = unit_laplacian(20);
        let tg = TimeGrid::new(0.1, 256).unwrap();
        let ev = Evolver::new(&op, &b, SampledField::Zero, tg).unwrap();
        let mut y0 = DVector::zeros(20);
        y0[0] = 1.0;
        let yt = ev.terminal(&SampledField::Zero, &y0).unwrap();
        let lam = b.eigenvalue(0);
        let dt = tg.dt();
        let bound = lam.powi(3) * dt * dt * 0.1;
        assert!((yt[0] - (-lam * 0.1).exp()).abs() < bound);
        assert!(yt.rows(1, 19).amax() < 1e-12);
    }

    #[test]
    fn zero_forcing_has_zero_offset() {
        let (op, b) = unit_laplacian(12);
        let tg = TimeGrid::new(0.5, 32).unwrap();
        let e = SpaceTimeField::parse("sin(3*x)*cos(t)").unwrap();
        let pm = period_map(&op, &b, &e, &SpaceTimeField::zero(), &tg).unwrap();
        assert_eq!(pm.offset, DVector::zeros(12));
    }

    #[test]
    fn time_varying_perturbation_uses_per_step_factors() {
        let (op, b) = unit_laplacian(10);
        let tg = TimeGrid::new(1.0, 16).unwrap();
        let e = SpaceTimeField::parse("t").unwrap().sample(op.domain(), &tg).unwrap();
        let ev = Evolver::new(&op, &b, e, tg).unwrap();
        assert_eq!(ev.factors.len(), 16);
    }

    #[test]
    fn singular_step_is_reported() {
        let d = DomainSpec::interval(0.0, 1.0, 10).unwrap();
        let op = build_operator(&d, &OperatorSpec::laplacian(0.0)).unwrap();
        let b = eigendecompose(&op).unwrap();
        let tg = TimeGrid::new(1.0, 16).unwrap();
        // I + dt/2 (A + e) with e = -2/dt - λ_1 annihilates the first mode.
        let shift = -2.0 / tg.dt() - b.eigenvalue(0);
        let e = SampledField::Steady(DVector::from_element(10, shift));
        assert!(matches!(
            Evolver::new(&op, &b, e, tg),
            Err(Error::SingularStep { .. })
        ));
    }

    #[test]
    fn perturbation_norms() {
        let d = DomainSpec::interval(0.0, PI, 100).unwrap();
        let tg = TimeGrid::new(1.0, 16).unwrap();
        let z = perturbation_norm(&SpaceTimeField::zero(), 4.0, &tg, &d).unwrap();
        assert_eq!(z.epsilon, 0.0);
        let c = perturbation_norm(&SpaceTimeField::parse("0.3").unwrap(), 4.0, &tg, &d).unwrap();
        assert!((c.epsilon - 0.3 * PI.powf(0.25)).abs() < 1e-10);
        let e = SpaceTimeField::parse("sin(x) * cos(t)").unwrap();
        let a = perturbation_norm(&e, 3.0, &tg, &d).unwrap().epsilon;
        let b = perturbation_norm(&e.clone().scaled(-2.5), 3.0, &tg, &d).unwrap().epsilon;
        assert!((b - 2.5 * a).abs() < 1e-12 * b);
        assert!(matches!(
            perturbation_norm(&SpaceTimeField::zero(), 2.0, &tg, &d),
            Err(Error::BadExponent { .. })
        ));
    }

    #[test]
    fn dirichlet_energy_of_eigenvector() {
        let d = DomainSpec::interval(0.0, 1.0, 30).unwrap();
        let spec = OperatorSpec::new(SpatialField::parse("1 + x").unwrap(), SpatialField::Const(0.0), 0.5);
        let op = build_operator(&d, &spec).unwrap();
        let b = eigendecompose(&op).unwrap();
        for j in [0, 3, 10] {
            let e = op.dirichlet_energy(b.vector(j).as_slice());
            assert!((e - b.eigenvalue(j)).abs() < 1e-9 * b.eigenvalue(j));
        }
    }
}

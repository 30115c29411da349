//! Finite-dimensional stabilizing controls.
//!
//! Given a reference `y₀` (periodic for `e ≡ 0`), the perturbed solution is
//! written `y = y₀ + v₀ + v_u`. `v₀` absorbs the perturbation acting on `y₀`,
//! `v_u` responds linearly to a control `Σ u_l X_l` (optionally cut down to
//! `χ_ω(x) χ_E(t)`). Both are K₀-approximate periodic with zero head data, so
//! only the head modes can fail to close up; their values at `T` are
//! `J₀ + J* u`, and the control is the solution of `J* u = −(J₀ + d)`, where
//! `d` is the head mismatch `y₀(T) − y₀(0)` of the reference itself (zero
//! whenever the reference is genuinely periodic).

use nalgebra::{DMatrix, DVector, SVD};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolution::{
    energy_norms, forcing_norm_sq, map_indices, perturbation_norm, EnergyNorms, Evolver, PeriodMap,
    PerturbationBudget, Trajectory,
};
use crate::field::{SampledField, SpaceTimeField};
use crate::periodic::{
    choose_k0, solve_with_system, KApproxSystem, PeriodicSolveReport, SolveOptions,
};
use crate::report::{matrix_rows, vector_items};
use crate::spectral::{gram_matrix, DiscreteOperator, EigenBasis, Subdomain};
use crate::time::TimeGrid;

/// `σ_min(J*) < NEAR_SINGULAR · σ_max(J*)` counts as numerically singular.
pub const NEAR_SINGULAR: f64 = 1e-6;
/// Relative tolerance of the final periodicity check.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Default tail-contraction margin for automatic `K₀`.
pub const K0_MARGIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum K0Choice {
    Auto { margin: f64 },
    Fixed(usize),
}

impl Default for K0Choice {
    fn default() -> Self {
        K0Choice::Auto { margin: K0_MARGIN }
    }
}

/// `J*` with its conditioning, and the offset `J₀` once computed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlMap {
    #[serde(serialize_with = "matrix_rows")]
    pub jstar: DMatrix<f64>,
    #[serde(serialize_with = "vector_items")]
    pub j0: DVector<f64>,
    pub condition_number: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub near_singular: bool,
    /// Smallest eigenvalue of `X(ω, K₀)` for localized maps.
    pub gram_min_eigenvalue: Option<f64>,
}

impl ControlMap {
    fn new(jstar: DMatrix<f64>, gram_min_eigenvalue: Option<f64>) -> Result<Self> {
        let k = jstar.nrows();
        let sv = SVD::try_new(jstar.clone(), false, false, f64::EPSILON, 0)
            .ok_or(Error::ConvergenceFailure)?
            .singular_values;
        let (sigma_min, sigma_max) = (sv.min(), sv.max());
        Ok(Self {
            jstar,
            j0: DVector::zeros(k),
            condition_number: if sigma_min > 0.0 { sigma_max / sigma_min } else { f64::INFINITY },
            sigma_min,
            sigma_max,
            near_singular: !(sigma_min >= NEAR_SINGULAR * sigma_max) || sigma_max == 0.0,
            gram_min_eigenvalue,
        })
    }

    pub fn k0(&self) -> usize {
        self.jstar.nrows()
    }

    /// `u` with `J* u = −rhs`; fails with [`Error::NearSingular`] when `J*` is
    /// numerically singular.
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        if self.near_singular {
            return Err(Error::NearSingular {
                sigma_min: self.sigma_min,
                sigma_max: self.sigma_max,
            });
        }
        let lu = self.jstar.clone().full_piv_lu();
        lu.solve(&(-rhs)).ok_or(Error::NearSingular {
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
        })
    }
}

/// Space–time support `ω × E` of a localized control.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationSpec {
    omega: Subdomain,
    intervals: Vec<(f64, f64)>,
    m_e: f64,
}

impl LocalizationSpec {
    /// `intervals` are subintervals of `[0, T]`; overlaps are merged.
    pub fn new(omega: Subdomain, intervals: &[(f64, f64)], grid: &TimeGrid) -> Result<Self> {
        if omega.count() == 0 {
            return Err(Error::EmptySubdomain);
        }
        let period = grid.period();
        let mut iv = intervals.to_vec();
        for &(a, b) in &iv {
            if !(a >= 0.0 && b <= period && a < b) {
                return Err(Error::InvalidLocalization(format!(
                    "time interval [{a}, {b}] is empty or outside [0, {period}]"
                )));
            }
        }
        iv.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (a, b) in iv {
            match merged.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        let m_e = merged.iter().map(|(a, b)| b - a).sum();
        if merged.is_empty() {
            return Err(Error::InvalidLocalization("E is empty".into()));
        }
        Ok(Self {
            omega,
            intervals: merged,
            m_e,
        })
    }

    /// `ω = Ω`, `E = [0, T]`.
    pub fn full(omega: Subdomain, grid: &TimeGrid) -> Result<Self> {
        Self::new(omega, &[(0.0, grid.period())], grid)
    }

    pub fn omega(&self) -> &Subdomain {
        &self.omega
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn m_e(&self) -> f64 {
        self.m_e
    }

    /// `χ_E` averaged over each time step.
    pub fn coverage(&self, grid: &TimeGrid) -> Vec<f64> {
        (0..grid.steps()).map(|k| grid.coverage(k, &self.intervals)).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilizationReport {
    pub k0: usize,
    #[serde(serialize_with = "vector_items")]
    pub control: DVector<f64>,
    /// Head data `a_j = ⟨y₀(·,0), X_j⟩`.
    #[serde(serialize_with = "vector_items")]
    pub head: DVector<f64>,
    /// Head mismatch `y₀(T) − y₀(0)` of the reference.
    #[serde(serialize_with = "vector_items")]
    pub reference_drift: DVector<f64>,
    pub control_map: ControlMap,
    pub residual: f64,
    pub residual_tolerance: f64,
    pub head_residual: f64,
    pub sup_norm: f64,
    pub norm_u: f64,
    pub norm_u_sq: f64,
    pub deviation: EnergyNorms,
    pub budget: PerturbationBudget,
    /// `∫_Q f²`.
    pub forcing_norm_sq: f64,
    /// Deviation energy over `ε²(1 + |a|² + ‖f‖²)`; `None` when `ε = 0`.
    pub ratio_17: Option<f64>,
    /// `‖u‖²` over the same scale; `None` when `ε = 0`.
    pub ratio_18: Option<f64>,
    pub m_e: Option<f64>,
    pub norm_u_times_m_e: Option<f64>,
    #[serde(skip)]
    pub trajectory: Trajectory,
    #[serde(skip)]
    pub reference: Trajectory,
}

/// A perturbed system prepared for control synthesis: the perturbed
/// propagator, the reference solution, `K₀` and the K₀-approximate solve.
pub struct Stabilizer<'a> {
    ev: Evolver<'a>,
    f_field: SpaceTimeField,
    e_field: SpaceTimeField,
    forcing: SampledField,
    pm: PeriodMap,
    system: KApproxSystem,
    reference: PeriodicSolveReport,
    reference_grid: Vec<DVector<f64>>,
    q: f64,
    opts: SolveOptions,
}

impl<'a> Stabilizer<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        op: &'a DiscreteOperator,
        basis: &'a EigenBasis,
        e: &SpaceTimeField,
        f: &SpaceTimeField,
        grid: TimeGrid,
        q: f64,
        k0: K0Choice,
        opts: SolveOptions,
    ) -> Result<Self> {
        let d = op.domain();
        let forcing = f.sample(d, &grid)?;
        let free = Evolver::new(op, basis, SampledField::Zero, grid)?;
        let reference = reference_solution(&free, &forcing, &opts)?;
        let reference_grid = (0..=grid.steps())
            .map(|k| reference.trajectory.grid_values(basis, k))
            .collect::<Result<Vec<_>>>()?;

        let ev = Evolver::new(op, basis, e.sample(d, &grid)?, grid)?;
        let pm = ev.period_map(&forcing)?;
        let k0 = match k0 {
            K0Choice::Auto { margin } => choose_k0(&pm, margin)?,
            K0Choice::Fixed(k) => k,
        };
        if k0 == 0 || k0 > basis.len() {
            return Err(Error::DimensionMismatch {
                expected: basis.len(),
                found: k0,
            });
        }
        let system = KApproxSystem::new(&pm, k0, opts.rank_tol)?;
        Ok(Self {
            ev,
            f_field: f.clone(),
            e_field: e.clone(),
            forcing,
            pm,
            system,
            reference,
            reference_grid,
            q,
            opts,
        })
    }

    pub fn k0(&self) -> usize {
        self.system.k()
    }

    pub fn period_map(&self) -> &PeriodMap {
        &self.pm
    }

    pub fn reference(&self) -> &PeriodicSolveReport {
        &self.reference
    }

    fn grid(&self) -> &TimeGrid {
        self.ev.time_grid()
    }

    /// Head values at `T` of the K₀-approximate solution with zero head data.
    fn head_response(&self, forcing: &SampledField) -> Result<DVector<f64>> {
        let k = self.k0();
        let offset = self.ev.offset(forcing)?;
        let (y0, _) = self.system.solve(&vec![0.0; k], &offset)?;
        let end = &self.pm.p * y0 + offset;
        Ok(end.rows(0, k).clone_owned())
    }

    /// `J₀`: response to the forcing `−e·y₀`, with `y₀` averaged over each step.
    pub fn compute_j0(&self) -> Result<DVector<f64>> {
        let forcing = match self.ev.perturbation() {
            SampledField::Zero => return Ok(DVector::zeros(self.k0())),
            e => SampledField::Unsteady(
                (0..self.grid().steps())
                    .map(|k| {
                        let ek = e.at(k).expect("nonzero field");
                        let avg = (&self.reference_grid[k] + &self.reference_grid[k + 1]) * 0.5;
                        -ek.component_mul(&avg)
                    })
                    .collect(),
            ),
        };
        self.head_response(&forcing)
    }

    /// `J*` with columns assembled in the given order.
    fn jstar_columns(&self, order: &[usize], shape: impl Fn(usize) -> SampledField + Sync) -> Result<DMatrix<f64>> {
        let k = self.k0();
        let cols = map_indices(order.len(), |i| self.head_response(&shape(order[i])))?;
        let mut m = DMatrix::zeros(k, k);
        for (i, &l) in order.iter().enumerate() {
            m.set_column(l, &cols[i]);
        }
        Ok(m)
    }

    /// `J*`: column `l` is the response to the steady forcing `X_l`.
    pub fn assemble_jstar(&self) -> Result<ControlMap> {
        let order: Vec<usize> = (0..self.k0()).collect();
        self.assemble_jstar_ordered(&order)
    }

    pub fn assemble_jstar_ordered(&self, order: &[usize]) -> Result<ControlMap> {
        let basis = self.ev.basis();
        let m = self.jstar_columns(order, |l| SampledField::Steady(basis.vector(l)))?;
        ControlMap::new(m, None)
    }

    /// Localized `J*`: column `l` is the response to `χ_ω χ_E X_l`.
    pub fn assemble_jstar_local(&self, loc: &LocalizationSpec) -> Result<ControlMap> {
        let basis = self.ev.basis();
        let gram = gram_matrix(basis, loc.omega(), self.k0())?;
        let chi = loc.omega().indicator();
        let cov = loc.coverage(self.grid());
        let order: Vec<usize> = (0..self.k0()).collect();
        let m = self.jstar_columns(&order, |l| local_shape(&basis.vector(l).component_mul(&chi), &cov))?;
        ControlMap::new(m, Some(gram.min_eigenvalue))
    }

    pub fn synthesize(&self) -> Result<StabilizationReport> {
        let map = self.assemble_jstar()?;
        let basis = self.ev.basis();
        self.finish(map, None, |u| {
            let mut g = DVector::zeros(basis.len());
            for (l, &ul) in u.iter().enumerate() {
                g.axpy(ul, &basis.vector(l), 1.0);
            }
            SampledField::Steady(g)
        })
    }

    pub fn synthesize_local(&self, loc: &LocalizationSpec) -> Result<StabilizationReport> {
        let map = self.assemble_jstar_local(loc)?;
        let basis = self.ev.basis();
        let chi = loc.omega().indicator();
        let cov = loc.coverage(self.grid());
        self.finish(map, Some(loc.m_e()), |u| {
            let mut g = DVector::zeros(basis.len());
            for (l, &ul) in u.iter().enumerate() {
                g.axpy(ul, &basis.vector(l), 1.0);
            }
            local_shape(&g.component_mul(&chi), &cov)
        })
    }

    fn finish(
        &self,
        mut map: ControlMap,
        m_e: Option<f64>,
        shape: impl Fn(&DVector<f64>) -> SampledField,
    ) -> Result<StabilizationReport> {
        let k = self.k0();
        let reference = &self.reference.trajectory;
        let head = reference.initial().rows(0, k).clone_owned();
        let drift = reference.terminal().rows(0, k) - &head;
        map.j0 = self.compute_j0()?;
        let u = map.solve(&(&map.j0 + &drift)).map_err(|err| match err {
            Error::NearSingular { sigma_min, sigma_max } => Error::PerturbationTooLarge { sigma_min, sigma_max },
            other => other,
        })?;

        let forcing = self.forcing.plus(&shape(&u));
        let offset = self.ev.offset(&forcing)?;
        let solved = solve_with_system(&self.ev, &forcing, &self.system, &offset, head.as_slice(), &self.opts)?;
        let traj = solved.trajectory;

        let basis = self.ev.basis();
        let op = self.ev.operator();
        let sup_norm = (0..=self.grid().steps())
            .map(|j| traj.coeffs().column(j).norm())
            .fold(0.0, f64::max);
        let residual = crate::periodic::periodicity_residual(&traj);
        let tolerance = RESIDUAL_TOL * (1.0 + sup_norm);
        if !(residual <= tolerance) {
            return Err(Error::ResidualCheckFailed { residual, tolerance });
        }
        let deviation = energy_norms(&traj.minus(reference)?, op, basis)?;
        let budget = perturbation_norm(&self.e_field, self.q, self.grid(), op.domain())?;
        let f_sq = forcing_norm_sq(&self.forcing, self.grid(), op.weight());
        let mut scale = budget.epsilon.powi(2) * (1.0 + head.norm_squared() + f_sq);
        if let Some(m) = m_e {
            scale /= m * m;
        }
        let ratio = |v: f64| (budget.epsilon > 0.0).then(|| v / scale);
        let norm_u = u.norm();
        Ok(StabilizationReport {
            k0: k,
            head_residual: solved.head_residual,
            reference_drift: drift,
            control_map: map,
            residual,
            residual_tolerance: tolerance,
            sup_norm,
            norm_u,
            norm_u_sq: norm_u * norm_u,
            ratio_17: ratio(deviation.total()),
            ratio_18: ratio(norm_u * norm_u),
            deviation,
            budget,
            forcing_norm_sq: f_sq,
            m_e,
            norm_u_times_m_e: m_e.map(|m| m * norm_u),
            control: u,
            head,
            trajectory: traj,
            reference: reference.clone(),
        })
    }

    /// Forcing field the stabilizer was built with.
    pub fn forcing(&self) -> &SpaceTimeField {
        &self.f_field
    }
}

/// `χ_E(t_k)·g` per step; steady when `E` covers every step.
fn local_shape(g: &DVector<f64>, coverage: &[f64]) -> SampledField {
    if coverage.iter().all(|&c| c == 1.0) {
        SampledField::Steady(g.clone())
    } else {
        SampledField::Unsteady(coverage.iter().map(|&c| g * c).collect())
    }
}

/// Fully periodic (`K = 0`) minimum-norm solution of the unperturbed system.
pub fn reference_solution(free: &Evolver<'_>, forcing: &SampledField, opts: &SolveOptions) -> Result<PeriodicSolveReport> {
    let pm = free.period_map(forcing)?;
    let sys = KApproxSystem::new(&pm, 0, opts.rank_tol)?;
    solve_with_system(free, forcing, &sys, &pm.offset, &[], opts)
}

pub fn compute_j0(stab: &Stabilizer<'_>) -> Result<DVector<f64>> {
    stab.compute_j0()
}

pub fn assemble_jstar(stab: &Stabilizer<'_>) -> Result<ControlMap> {
    stab.assemble_jstar()
}

pub fn assemble_jstar_local(stab: &Stabilizer<'_>, loc: &LocalizationSpec) -> Result<ControlMap> {
    stab.assemble_jstar_local(loc)
}

#[allow(clippy::too_many_arguments)]
pub fn synthesize_control(
    op: &DiscreteOperator,
    basis: &EigenBasis,
    e: &SpaceTimeField,
    f: &SpaceTimeField,
    grid: TimeGrid,
    q: f64,
    k0: K0Choice,
) -> Result<StabilizationReport> {
    Stabilizer::new(op, basis, e, f, grid, q, k0, SolveOptions::default())?.synthesize()
}

#[allow(clippy::too_many_arguments)]
pub fn synthesize_control_local(
    op: &DiscreteOperator,
    basis: &EigenBasis,
    e: &SpaceTimeField,
    f: &SpaceTimeField,
    grid: TimeGrid,
    q: f64,
    k0: K0Choice,
    loc: &LocalizationSpec,
) -> Result<StabilizationReport> {
    Stabilizer::new(op, basis, e, f, grid, q, k0, SolveOptions::default())?.synthesize_local(loc)
}

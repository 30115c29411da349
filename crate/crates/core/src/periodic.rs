//! K-approximate periodic solutions: the first `K` modes are pinned by initial
//! data, every mode beyond `K` satisfies `y_j(0) = y_j(T)`.
//!
//! With the affine period map `y(T) = P·y(0) + q` this is one dense linear
//! system whose first `K` rows are identity rows and whose remaining rows are
//! rows of `I − P`. Rank deficiency (resonance) is resolved by truncated SVD
//! with a minimum-norm completion, and the part of the right-hand side that
//! the truncated directions cannot absorb is reported as an inconsistency
//! defect per resonant direction.

use nalgebra::{DMatrix, DVector, SVD};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolution::{Evolver, PeriodMap, Trajectory};
use crate::field::SampledField;

/// Default relative singular-value cutoff.
pub const RANK_TOL: f64 = 1e-10;
/// Default threshold above which a defect means "no periodic solution".
pub const DEFECT_TOL: f64 = 1e-8;

/// Head size `K` and head initial data `a ∈ R^K`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodicityClass {
    head: Vec<f64>,
}

impl PeriodicityClass {
    pub fn new(head: Vec<f64>) -> Result<Self> {
        if head.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("head", "head data must be finite"));
        }
        Ok(Self { head })
    }

    /// Fully periodic (`K = 0`).
    pub fn periodic() -> Self {
        Self { head: Vec::new() }
    }

    pub fn zero_head(k: usize) -> Self {
        Self { head: vec![0.0; k] }
    }

    pub fn k(&self) -> usize {
        self.head.len()
    }

    pub fn head(&self) -> &[f64] {
        &self.head
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveOptions {
    pub rank_tol: f64,
    pub defect_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            rank_tol: RANK_TOL,
            defect_tol: DEFECT_TOL,
        }
    }
}

/// One truncated direction of the solve: its dominant mode (1-based) and the
/// per-period forcing imbalance `|uᵀ b| / T` along it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResonantMode {
    pub mode: usize,
    pub defect: f64,
}

/// Truncated-SVD minimum-norm solution of `M y = b`.
#[derive(Debug, Clone)]
pub struct MinNormSolver {
    matrix: DMatrix<f64>,
    svd: SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
    cutoff: f64,
    sigma_max: f64,
    sigma_min: f64,
}

impl MinNormSolver {
    pub fn new(m: DMatrix<f64>, rank_tol: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let svd = SVD::try_new(m.clone(), true, true, f64::EPSILON, 0).ok_or(Error::ConvergenceFailure)?;
        let sigma_max = svd.singular_values.max();
        let sigma_min = svd.singular_values.min();
        Ok(Self {
            matrix: m,
            svd,
            cutoff: rank_tol * sigma_max,
            sigma_max,
            sigma_min,
        })
    }

    pub fn condition_number(&self) -> f64 {
        if self.sigma_min > 0.0 {
            self.sigma_max / self.sigma_min
        } else {
            f64::INFINITY
        }
    }

    pub fn nullity(&self) -> usize {
        self.svd.singular_values.iter().filter(|&&s| s <= self.cutoff).count()
    }

    fn pseudo_solve(&self, b: &DVector<f64>, truncated: &mut Vec<(usize, f64)>) -> DVector<f64> {
        let u = self.svd.u.as_ref().expect("computed with u");
        let vt = self.svd.v_t.as_ref().expect("computed with v_t");
        let mut y = DVector::zeros(b.len());
        for (i, &s) in self.svd.singular_values.iter().enumerate() {
            let c = u.column(i).dot(b);
            if s > self.cutoff {
                y.axpy(c / s, &vt.row(i).transpose(), 1.0);
            } else {
                truncated.push((u.column(i).iamax(), c));
            }
        }
        y
    }

    /// Minimum-norm solution (with one step of iterative refinement) and the
    /// residual components `uᵢᵀ b` along every truncated left singular
    /// vector, with each vector's dominant index.
    pub fn solve(&self, b: &DVector<f64>) -> (DVector<f64>, Vec<(usize, f64)>) {
        let mut truncated = Vec::new();
        let mut y = self.pseudo_solve(b, &mut truncated);
        let r = b - &self.matrix * &y;
        y += self.pseudo_solve(&r, &mut Vec::new());
        (y, truncated)
    }
}

/// The solve matrix for head size `K` over a fixed propagator, reusable for
/// many right-hand sides.
#[derive(Debug, Clone)]
pub struct KApproxSystem {
    k: usize,
    period: f64,
    solver: MinNormSolver,
}

impl KApproxSystem {
    pub fn new(pm: &PeriodMap, k: usize, rank_tol: f64) -> Result<Self> {
        let n = pm.dim();
        if k > n {
            return Err(Error::DimensionMismatch { expected: n, found: k });
        }
        let m = DMatrix::from_fn(n, n, |i, j| {
            let id = if i == j { 1.0 } else { 0.0 };
            if i < k {
                id
            } else {
                id - pm.p[(i, j)]
            }
        });
        Ok(Self {
            k,
            period: pm.period,
            solver: MinNormSolver::new(m, rank_tol)?,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn solver(&self) -> &MinNormSolver {
        &self.solver
    }

    /// Initial modal state for head data `head` and period-map offset `offset`.
    pub fn solve(&self, head: &[f64], offset: &DVector<f64>) -> Result<(DVector<f64>, Vec<ResonantMode>)> {
        if head.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                found: head.len(),
            });
        }
        let mut b = offset.clone();
        b.rows_mut(0, self.k).copy_from_slice(head);
        let (y0, truncated) = self.solver.solve(&b);
        let modes = truncated
            .into_iter()
            .map(|(mode, c)| ResonantMode {
                mode: mode + 1,
                defect: c.abs() / self.period,
            })
            .collect();
        Ok((y0, modes))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PeriodicSolveReport {
    pub k: usize,
    #[serde(skip)]
    pub trajectory: Trajectory,
    #[serde(skip)]
    pub initial: DVector<f64>,
    /// `‖y_j(T) − y_j(0)‖` over the tail modes `j > K` of the re-evolved trajectory.
    pub tail_residual: f64,
    /// `‖y_j(0) − a_j‖` over the head modes.
    pub head_residual: f64,
    /// `‖y(·, 0) − y(·, T)‖_h` over all modes.
    pub periodicity_residual: f64,
    pub condition_number: f64,
    pub rank_deficient: bool,
    pub nullity: usize,
    pub resonant_modes: Vec<ResonantMode>,
    pub max_defect: f64,
    /// False when some resonant direction carries a defect above tolerance,
    /// i.e. no K-approximate periodic solution exists.
    pub consistent: bool,
}

impl PeriodicSolveReport {
    /// Turns a rank-deficient solve into [`Error::ResonantTail`].
    pub fn ensure_full_rank(&self) -> Result<()> {
        if self.rank_deficient {
            return Err(Error::ResonantTail {
                nullity: self.nullity,
                max_defect: self.max_defect,
            });
        }
        Ok(())
    }
}

/// Solves for the K-approximate periodic initial state and re-evolves it.
pub fn solve_k_approx_periodic(
    ev: &Evolver<'_>,
    forcing: &SampledField,
    pm: &PeriodMap,
    pc: &PeriodicityClass,
    opts: &SolveOptions,
) -> Result<PeriodicSolveReport> {
    let sys = KApproxSystem::new(pm, pc.k(), opts.rank_tol)?;
    solve_with_system(ev, forcing, &sys, &pm.offset, pc.head(), opts)
}

pub(crate) fn solve_with_system(
    ev: &Evolver<'_>,
    forcing: &SampledField,
    sys: &KApproxSystem,
    offset: &DVector<f64>,
    head: &[f64],
    opts: &SolveOptions,
) -> Result<PeriodicSolveReport> {
    let (y0, resonant_modes) = sys.solve(head, offset)?;
    let trajectory = ev.run(forcing, &y0)?;
    let k = sys.k();
    let start = trajectory.initial();
    let end = trajectory.terminal();
    let n = start.len();
    let tail_residual = (end.rows(k, n - k) - start.rows(k, n - k)).norm();
    let head_residual = (start.rows(0, k) - DVector::from_column_slice(head)).norm();
    let max_defect = resonant_modes.iter().map(|r| r.defect).fold(0.0, f64::max);
    Ok(PeriodicSolveReport {
        k,
        periodicity_residual: periodicity_residual(&trajectory),
        trajectory,
        initial: y0,
        tail_residual,
        head_residual,
        condition_number: sys.solver().condition_number(),
        rank_deficient: !resonant_modes.is_empty(),
        nullity: resonant_modes.len(),
        consistent: max_defect <= opts.defect_tol,
        max_defect,
        resonant_modes,
    })
}

/// Smallest `K` whose tail block `P[K.., K..]` has spectral norm at most
/// `1 − margin`.
pub fn choose_k0(pm: &PeriodMap, margin: f64) -> Result<usize> {
    let n = pm.dim();
    let limit = 1.0 - margin;
    for k in 0..n {
        let tail = pm.p.view((k, k), (n - k, n - k)).clone_owned();
        let norm = SVD::try_new(tail, false, false, f64::EPSILON, 0)
            .ok_or(Error::ConvergenceFailure)?
            .singular_values
            .max();
        if norm <= limit {
            return Ok(k);
        }
    }
    Err(Error::NoAdmissibleK)
}

/// `‖y(·, 0) − y(·, T)‖_h`, computed from modal coefficients.
pub fn periodicity_residual(traj: &Trajectory) -> f64 {
    (traj.initial() - traj.terminal()).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{build_operator, eigendecompose, DomainSpec, OperatorSpec};
    use crate::time::TimeGrid;

    #[test]
    fn zero_data_gives_zero_solution() {
        let d = DomainSpec::interval(0.0, 1.0, 10).unwrap();
        let op = build_operator(&d, &OperatorSpec::laplacian(0.0)).unwrap();
        let b = eigendecompose(&op).unwrap();
        let tg = TimeGrid::new(0.05, 64).unwrap();
        let ev = Evolver::new(&op, &b, SampledField::Zero, tg).unwrap();
        let pm = ev.period_map(&SampledField::Zero).unwrap();
        let r = solve_k_approx_periodic(&ev, &SampledField::Zero, &pm, &PeriodicityClass::periodic(), &SolveOptions::default()).unwrap();
        assert_eq!(r.initial.amax(), 0.0);
        assert!(!r.rank_deficient);
        // I − P is diagonal: condition number from the extreme modal factors
        let diag: Vec<f64> = (0..10).map(|j| 1.0 - pm.p[(j, j)]).collect();
        let want = diag.iter().cloned().fold(0.0, f64::max) / diag.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((r.condition_number - want).abs() < 1e-8 * want);
        let exact = (1.0 - (-b.eigenvalue(9) * 0.05f64).exp()) / (1.0 - (-b.eigenvalue(0) * 0.05f64).exp());
        assert!((r.condition_number - exact).abs() < 0.05 * exact);
    }

    #[test]
    fn head_dimension_checked() {
        let pm = PeriodMap {
            p: DMatrix::identity(3, 3) * 0.5,
            offset: DVector::zeros(3),
            dt: 0.1,
            period: 1.0,
        };
        let sys = KApproxSystem::new(&pm, 2, RANK_TOL).unwrap();
        assert!(sys.solve(&[1.0], &pm.offset).is_err());
        assert!(KApproxSystem::new(&pm, 4, RANK_TOL).is_err());
    }

    #[test]
    fn margin_monotone() {
        let pm = PeriodMap {
            p: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.8, 0.4, 0.1, 0.01])),
            offset: DVector::zeros(5),
            dt: 0.1,
            period: 1.0,
        };
        let ks: Vec<usize> = [0.05, 0.3, 0.5, 0.7, 0.95]
            .iter()
            .map(|&m| choose_k0(&pm, m).unwrap())
            .collect();
        assert_eq!(ks, vec![1, 2, 2, 3, 4]);
        assert!(matches!(choose_k0(&pm, 0.995), Err(Error::NoAdmissibleK)));
    }
}

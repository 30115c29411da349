//! Discrete elliptic operator `L₀ = -div(a ∇·) + c` with homogeneous Dirichlet
//! conditions, its eigenbasis, modal projections and subdomain Gram matrices.
//!
//! The discretization is the conservative three-point (five-point on rectangles)
//! flux form on a uniform grid of interior nodes, with coefficients `a` taken at
//! the edge midpoints. Every interior node carries the same quadrature weight
//! (`h` on intervals, `hx·hy` on rectangles), so the stiffness matrix is exactly
//! symmetric and the discrete inner product is a scalar multiple of the
//! Euclidean one.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::banded::SymBand;
use crate::error::{Error, Result};
use crate::field::SpatialField;
use crate::report::fmt_num;

/// Largest dense eigenproblem accepted on rectangles.
pub const MAX_DOF: usize = 4096;

/// An interval `(x0, x1)` or a rectangle `(x0, x1) × (y0, y1)` with `n` interior
/// grid points per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub x: (f64, f64),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<(f64, f64)>,
    pub n: usize,
}

impl DomainSpec {
    pub const MIN_N: usize = 8;

    pub fn interval(x0: f64, x1: f64, n: usize) -> Result<Self> {
        let d = Self { x: (x0, x1), y: None, n };
        d.validate()?;
        Ok(d)
    }

    pub fn rectangle(x: (f64, f64), y: (f64, f64), n: usize) -> Result<Self> {
        let d = Self { x, y: Some(y), n };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && b > a;
        if !ok(self.x) {
            return Err(Error::InvalidDomain(format!("degenerate x-interval {:?}", self.x)));
        }
        if let Some(y) = self.y {
            if !ok(y) {
                return Err(Error::InvalidDomain(format!("degenerate y-interval {y:?}")));
            }
        }
        if self.n < Self::MIN_N {
            return Err(Error::GridTooCoarse { n: self.n });
        }
        if self.n_dof() > MAX_DOF {
            return Err(Error::InvalidDomain(format!(
                "{} unknowns exceed the dense limit of {MAX_DOF}",
                self.n_dof()
            )));
        }
        Ok(())
    }

    pub fn is_rectangle(&self) -> bool {
        self.y.is_some()
    }

    /// Spatial dimension N.
    pub fn dim(&self) -> usize {
        if self.is_rectangle() {
            2
        } else {
            1
        }
    }

    pub fn n_dof(&self) -> usize {
        if self.is_rectangle() {
            self.n * self.n
        } else {
            self.n
        }
    }

    pub fn hx(&self) -> f64 {
        (self.x.1 - self.x.0) / (self.n + 1) as f64
    }

    pub fn hy(&self) -> f64 {
        self.y.map_or(1.0, |(a, b)| (b - a) / (self.n + 1) as f64)
    }

    /// Quadrature weight of every interior node.
    pub fn weight(&self) -> f64 {
        self.hx() * self.hy()
    }

    /// Coordinates of interior node `p` (row-major in x on rectangles).
    pub fn node(&self, p: usize) -> (f64, Option<f64>) {
        if let Some((y0, _)) = self.y {
            let (ix, iy) = (p % self.n, p / self.n);
            (
                self.x.0 + (ix + 1) as f64 * self.hx(),
                Some(y0 + (iy + 1) as f64 * self.hy()),
            )
        } else {
            (self.x.0 + (p + 1) as f64 * self.hx(), None)
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = (f64, Option<f64>)> + '_ {
        (0..self.n_dof()).map(|p| self.node(p))
    }

    /// Bounding box test including the boundary.
    pub fn contains(&self, x: f64, y: Option<f64>) -> bool {
        let inside = |v: f64, (a, b): (f64, f64)| v >= a && v <= b;
        inside(x, self.x)
            && match (y, self.y) {
                (Some(y), Some(r)) => inside(y, r),
                (None, None) => true,
                _ => false,
            }
    }
}

/// Coefficients of `L₀`. On rectangles `a` is the xx-entry and `a_y` the
/// yy-entry of the diagonal diffusion tensor (`a_y` defaults to `a`).
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSpec {
    pub a: SpatialField,
    pub a_y: Option<SpatialField>,
    pub c: SpatialField,
    pub lambda_star: f64,
}

impl OperatorSpec {
    pub fn new(a: SpatialField, c: SpatialField, lambda_star: f64) -> Self {
        Self {
            a,
            a_y: None,
            c,
            lambda_star,
        }
    }

    /// `-Δ + c` with constant `c`.
    pub fn laplacian(c: f64) -> Self {
        Self::new(SpatialField::Const(1.0), SpatialField::Const(c), 1.0)
    }
}

/// One grid edge of the flux stencil. `None` endpoints are boundary nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Edge {
    from: Option<usize>,
    to: Option<usize>,
    coef: f64,
    inv_h2: f64,
}

/// Assembled stiffness matrix of `L₀` on the interior nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteOperator {
    domain: DomainSpec,
    band: SymBand,
    potential: DVector<f64>,
    edges: Vec<Edge>,
}

/// Assembles the flux-form finite-difference operator, checking ellipticity of
/// `a` at every sampled point (nodes and edge midpoints).
pub fn build_operator(domain: &DomainSpec, op: &OperatorSpec) -> Result<DiscreteOperator> {
    domain.validate()?;
    if !(op.lambda_star > 0.0 && op.lambda_star <= 1.0) {
        return Err(Error::config(
            "operator.lambda_star",
            format!("must lie in (0, 1], got {}", op.lambda_star),
        ));
    }
    let (lo, hi) = (op.lambda_star, 1.0 / op.lambda_star);
    let check = |field: &SpatialField, x: f64, y: Option<f64>| -> Result<f64> {
        let v = field.eval(domain, x, y)?;
        if v < lo || v > hi {
            return Err(Error::EllipticityViolation {
                x: std::iter::once(x).chain(y).collect(),
                value: v,
                lower: lo,
                upper: hi,
            });
        }
        Ok(v)
    };

    let n = domain.n;
    let n_dof = domain.n_dof();
    let (hx, hy) = (domain.hx(), domain.hy());
    let mut edges = Vec::new();
    let mut potential = DVector::zeros(n_dof);
    for p in 0..n_dof {
        let (x, y) = domain.node(p);
        check(&op.a, x, y)?;
        if let Some(ay) = &op.a_y {
            check(ay, x, y)?;
        }
        potential[p] = op.c.eval(domain, x, y)?;
    }

    let a_y = op.a_y.as_ref().unwrap_or(&op.a);
    match domain.y {
        None => {
            for e in 0..=n {
                let xm = domain.x.0 + (e as f64 + 0.5) * hx;
                edges.push(Edge {
                    from: e.checked_sub(1),
                    to: (e < n).then_some(e),
                    coef: check(&op.a, xm, None)?,
                    inv_h2: 1.0 / (hx * hx),
                });
            }
        }
        Some((y0, _)) => {
            let idx = |ix: usize, iy: usize| -> Option<usize> {
                // ix, iy count from 0 at the lower boundary; interior is 1..=n
                (ix >= 1 && ix <= n && iy >= 1 && iy <= n).then(|| (iy - 1) * n + (ix - 1))
            };
            for iy in 1..=n {
                let yv = y0 + iy as f64 * hy;
                for ex in 0..=n {
                    let xm = domain.x.0 + (ex as f64 + 0.5) * hx;
                    edges.push(Edge {
                        from: idx(ex, iy),
                        to: idx(ex + 1, iy),
                        coef: check(&op.a, xm, Some(yv))?,
                        inv_h2: 1.0 / (hx * hx),
                    });
                }
            }
            for ix in 1..=n {
                let xv = domain.x.0 + ix as f64 * hx;
                for ey in 0..=n {
                    let ym = y0 + (ey as f64 + 0.5) * hy;
                    edges.push(Edge {
                        from: idx(ix, ey),
                        to: idx(ix, ey + 1),
                        coef: check(a_y, xv, Some(ym))?,
                        inv_h2: 1.0 / (hy * hy),
                    });
                }
            }
        }
    }

    let bw = if domain.is_rectangle() { n } else { 1 };
    let mut band = SymBand::zeros(n_dof, bw);
    for p in 0..n_dof {
        *band.diag_mut(p) = potential[p];
    }
    for e in &edges {
        let w = e.coef * e.inv_h2;
        if let Some(i) = e.from {
            *band.diag_mut(i) += w;
        }
        if let Some(j) = e.to {
            *band.diag_mut(j) += w;
        }
        if let (Some(i), Some(j)) = (e.from, e.to) {
            let (hi, lo) = if i > j { (i, j) } else { (j, i) };
            *band.get_mut(hi, hi - lo) -= w;
        }
    }

    Ok(DiscreteOperator {
        domain: domain.clone(),
        band,
        potential,
        edges,
    })
}

impl DiscreteOperator {
    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn n_dof(&self) -> usize {
        self.domain.n_dof()
    }

    pub fn weight(&self) -> f64 {
        self.domain.weight()
    }

    pub fn band(&self) -> &SymBand {
        &self.band
    }

    pub fn potential(&self) -> &DVector<f64> {
        &self.potential
    }

    /// Dense copy of the stiffness matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.n_dof();
        DMatrix::from_fn(n, n, |i, j| self.band.entry(i, j))
    }

    /// Operator with `c` replaced by `c + delta`.
    pub fn with_potential_shift(&self, delta: f64) -> Self {
        let mut out = self.clone();
        for p in 0..out.n_dof() {
            *out.band.diag_mut(p) += delta;
            out.potential[p] += delta;
        }
        out
    }

    /// Discrete Dirichlet energy `Σ_edges a_e (Δy / h)² · w` of a grid function.
    pub fn dirichlet_energy(&self, y: &[f64]) -> f64 {
        let w = self.weight();
        self.edges
            .iter()
            .map(|e| {
                let a = e.from.map_or(0.0, |i| y[i]);
                let b = e.to.map_or(0.0, |j| y[j]);
                e.coef * (b - a) * (b - a) * e.inv_h2
            })
            .sum::<f64>()
            * w
    }
}

/// Dirichlet eigenpairs of a [`DiscreteOperator`], eigenvalues ascending and
/// eigenvectors orthonormal in the weighted inner product `⟨u, v⟩_h = Σ u_i v_i h`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    eigenvalues: DVector<f64>,
    vectors: DMatrix<f64>,
    weight: f64,
}

/// Relative gap below which neighbouring eigenvalues are treated as one cluster.
const CLUSTER_TOL: f64 = 1e-9;

pub fn eigendecompose(op: &DiscreteOperator) -> Result<EigenBasis> {
    eigendecompose_matrix(op.matrix(), op.weight())
}

pub(crate) fn eigendecompose_matrix(m: DMatrix<f64>, weight: f64) -> Result<EigenBasis> {
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 100 * n.max(10))
        .ok_or(Error::ConvergenceFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);

    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n
            && (eigenvalues[end] - eigenvalues[start]).abs()
                <= CLUSTER_TOL * eigenvalues[start].abs().max(1.0)
        {
            end += 1;
        }
        if end - start > 1 {
            orthonormalize_columns(&mut vectors, start, end);
        }
        start = end;
    }

    let scale = 1.0 / weight.sqrt();
    for mut col in vectors.column_iter_mut() {
        let peak = col.amax();
        if let Some(first) = col.iter().copied().find(|v| v.abs() > 1e-8 * peak) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
        col *= scale;
    }
    Ok(EigenBasis {
        eigenvalues,
        vectors,
        weight,
    })
}

fn orthonormalize_columns(v: &mut DMatrix<f64>, start: usize, end: usize) {
    for j in start..end {
        for i in start..j {
            let proj = v.column(i).dot(&v.column(j));
            let ci = v.column(i).clone_owned();
            v.column_mut(j).axpy(-proj, &ci, 1.0);
        }
        let norm = v.column(j).norm();
        v.column_mut(j).unscale_mut(norm);
    }
}

impl EigenBasis {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Eigenvalue of mode `j` (0-based).
    pub fn eigenvalue(&self, j: usize) -> f64 {
        self.eigenvalues[j]
    }

    /// Columns are the eigenvectors `X_j` on the interior nodes.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn vector(&self, j: usize) -> DVector<f64> {
        self.vectors.column(j).clone_owned()
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Same eigenvectors with every eigenvalue moved by `delta`; pairs with
    /// [`DiscreteOperator::with_potential_shift`].
    pub fn with_eigenvalue_shift(&self, delta: f64) -> Self {
        let mut out = self.clone();
        out.eigenvalues.add_scalar_mut(delta);
        out
    }

    /// Replaces the eigenvectors; used to apply rotations inside eigenvalue
    /// clusters. The caller is responsible for keeping them orthonormal.
    pub fn with_vectors(&self, vectors: DMatrix<f64>) -> Result<Self> {
        if vectors.shape() != self.vectors.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: vectors.ncols(),
            });
        }
        Ok(Self {
            vectors,
            ..self.clone()
        })
    }

    /// Modal coefficients `y_j = Σ_i y(x_i) X_j(x_i) h`.
    pub fn project(&self, grid: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(grid.len())?;
        Ok(self.vectors.tr_mul(grid) * self.weight)
    }

    /// Grid values `y(x_i) = Σ_j c_j X_j(x_i)`.
    pub fn reconstruct(&self, coeffs: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(coeffs.len())?;
        Ok(&self.vectors * coeffs)
    }

    fn check_len(&self, found: usize) -> Result<()> {
        if found != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found,
            });
        }
        Ok(())
    }

    /// `max |Xᵀ diag(h) X - I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.vectors.tr_mul(&self.vectors) * self.weight;
        (g - DMatrix::identity(self.len(), self.len())).amax()
    }

    /// `‖A X_j − λ_j X_j‖₂` for mode `j`.
    pub fn residual(&self, op: &DiscreteOperator, j: usize) -> f64 {
        let x = self.vectors.column(j);
        let mut ax = vec![0.0; self.len()];
        op.band().apply_affine(1.0, 0.0, x.as_slice(), &mut ax);
        ax.iter()
            .zip(x.iter())
            .map(|(a, v)| (a - self.eigenvalues[j] * v).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Writes `j,lambda_j,node_1,...` with one row per mode (1-based `j`).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "j,lambda_j")?;
        for p in 1..=self.len() {
            write!(w, ",node_{p}")?;
        }
        writeln!(w)?;
        for j in 0..self.len() {
            write!(w, "{},{}", j + 1, fmt_num(self.eigenvalues[j]))?;
            for v in self.vectors.column(j).iter() {
                write!(w, ",{}", fmt_num(*v))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Node indicator `χ_ω` of a subdomain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subdomain {
    mask: Vec<bool>,
}

impl Subdomain {
    pub fn whole(domain: &DomainSpec) -> Self {
        Self {
            mask: vec![true; domain.n_dof()],
        }
    }

    pub fn from_mask(mask: Vec<bool>) -> Self {
        Self { mask }
    }

    /// Union of closed intervals (intervals) or boxes `[x0, x1, y0, y1]`
    /// (rectangles). Every piece must lie inside the domain.
    pub fn from_boxes(domain: &DomainSpec, boxes: &[Vec<f64>]) -> Result<Self> {
        let want = 2 * domain.dim();
        for b in boxes {
            if b.len() != want {
                return Err(Error::InvalidLocalization(format!(
                    "subdomain pieces need {want} bounds on this domain, got {}",
                    b.len()
                )));
            }
            let inside = b.chunks(2).zip([Some(domain.x), domain.y]).all(|(c, r)| {
                let (lo, hi) = r.expect("dimension checked");
                c[0] < c[1] && c[0] >= lo && c[1] <= hi
            });
            if !inside {
                return Err(Error::InvalidLocalization(format!(
                    "subdomain piece {b:?} is empty or outside the domain"
                )));
            }
        }
        let mask = domain
            .nodes()
            .map(|(x, y)| {
                boxes.iter().any(|b| {
                    x >= b[0] && x <= b[1] && y.is_none_or(|y| y >= b[2] && y <= b[3])
                })
            })
            .collect();
        Ok(Self { mask })
    }

    pub fn from_intervals(domain: &DomainSpec, intervals: &[(f64, f64)]) -> Result<Self> {
        let boxes: Vec<Vec<f64>> = intervals.iter().map(|&(a, b)| vec![a, b]).collect();
        Self::from_boxes(domain, &boxes)
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn contains(&self, p: usize) -> bool {
        self.mask[p]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_whole(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    pub fn is_subset_of(&self, other: &Subdomain) -> bool {
        self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }

    /// `χ_ω` as a 0/1 grid vector.
    pub fn indicator(&self) -> DVector<f64> {
        DVector::from_iterator(self.mask.len(), self.mask.iter().map(|&m| f64::from(m)))
    }
}

/// `X(ω, k)`: pairwise weighted inner products of the first `k` eigenvectors
/// restricted to `ω`, with its smallest eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub k: usize,
    pub matrix: DMatrix<f64>,
    pub min_eigenvalue: f64,
}

pub fn gram_matrix(basis: &EigenBasis, omega: &Subdomain, k: usize) -> Result<GramMatrix> {
    if omega.mask.len() != basis.len() {
        return Err(Error::DimensionMismatch {
            expected: basis.len(),
            found: omega.mask.len(),
        });
    }
    if k == 0 || k > basis.len() {
        return Err(Error::DimensionMismatch {
            expected: basis.len(),
            found: k,
        });
    }
    let rows: Vec<usize> = (0..omega.mask.len()).filter(|&p| omega.mask[p]).collect();
    if rows.is_empty() {
        return Err(Error::EmptySubdomain);
    }
    let restricted = basis.vectors.select_rows(&rows).columns(0, k).clone_owned();
    let mut matrix = restricted.tr_mul(&restricted) * basis.weight;
    matrix = (&matrix + matrix.transpose()) * 0.5;
    let min_eigenvalue = matrix
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let threshold = 1e-12 * matrix.trace() / k as f64;
    if min_eigenvalue <= threshold {
        return Err(Error::DegenerateGram {
            min_eigenvalue,
            threshold,
        });
    }
    Ok(GramMatrix {
        k,
        matrix,
        min_eigenvalue,
    })
}

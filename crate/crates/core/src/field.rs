//! Scalar fields over the domain and over space-time, and their grid samples.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::expr::{self, Bindings, Expr, Var};
use crate::spectral::DomainSpec;
use crate::time::TimeGrid;

/// A scalar field of `x` (and `y` on rectangles), used for operator coefficients.
#[derive(Debug, Clone, PartialEq)]
pub enum SpatialField {
    Const(f64),
    Expr(Expr),
    /// Uniform samples over the x-interval including both endpoints, linearly
    /// interpolated. Interval domains only.
    Samples(Vec<f64>),
}

impl SpatialField {
    pub fn parse(src: &str) -> Result<Self> {
        let e = expr::parse(src)?;
        if e.mentions(Var::T) {
            return Err(Error::config(
                src,
                "coefficient fields must not depend on t",
            ));
        }
        Ok(SpatialField::Expr(e))
    }

    pub fn eval(&self, domain: &DomainSpec, x: f64, y: Option<f64>) -> Result<f64> {
        let v = match self {
            SpatialField::Const(c) => *c,
            SpatialField::Expr(e) => e.eval(&Bindings::new(x, y, 0.0))?,
            SpatialField::Samples(s) => {
                if domain.is_rectangle() {
                    return Err(Error::InvalidDomain(
                        "sampled coefficient arrays are only supported on intervals".into(),
                    ));
                }
                interpolate(s, domain.x.0, domain.x.1, x)?
            }
        };
        if !v.is_finite() {
            return Err(Error::NonFiniteField {
                x: std::iter::once(x).chain(y).collect(),
                t: 0.0,
            });
        }
        Ok(v)
    }
}

fn interpolate(s: &[f64], x0: f64, x1: f64, x: f64) -> Result<f64> {
    if s.len() < 2 {
        return Err(Error::config("samples", "need at least two samples"));
    }
    let u = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let i = (u.floor() as usize).min(s.len() - 2);
    let w = u - i as f64;
    Ok(s[i] * (1.0 - w) + s[i + 1] * w)
}

type FieldFn = dyn Fn(f64, Option<f64>, f64) -> f64 + Send + Sync;

#[derive(Clone)]
enum Source {
    Zero,
    Expr(Expr),
    Grid(DVector<f64>),
    Func(Arc<FieldFn>),
}

/// A scalar field of `(x[, y], t)`: perturbations `e`, forcings `f`.
#[derive(Clone)]
pub struct SpaceTimeField {
    source: Source,
    scale: f64,
    offset: f64,
}

impl fmt::Debug for SpaceTimeField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let src = match &self.source {
            Source::Zero => "0".to_string(),
            Source::Expr(e) => e.to_string(),
            Source::Grid(v) => format!("<grid values, {} nodes>", v.len()),
            Source::Func(_) => "<closure>".to_string(),
        };
        write!(f, "SpaceTimeField({} * {} + {})", self.scale, src, self.offset)
    }
}

impl SpaceTimeField {
    pub fn zero() -> Self {
        Self {
            source: Source::Zero,
            scale: 1.0,
            offset: 0.0,
        }
    }

    pub fn from_expr(e: Expr) -> Self {
        Self {
            source: Source::Expr(e),
            scale: 1.0,
            offset: 0.0,
        }
    }

    pub fn parse(src: &str) -> Result<Self> {
        Ok(Self::from_expr(expr::parse(src)?))
    }

    /// Time-independent values given directly on the interior nodes.
    pub fn from_grid(values: DVector<f64>) -> Self {
        Self {
            source: Source::Grid(values),
            scale: 1.0,
            offset: 0.0,
        }
    }

    pub fn from_fn(f: impl Fn(f64, Option<f64>, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            source: Source::Func(Arc::new(f)),
            scale: 1.0,
            offset: 0.0,
        }
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.scale *= s;
        self.offset *= s;
        self
    }

    /// Adds a constant to the field.
    pub fn shifted(mut self, c: f64) -> Self {
        self.offset += c;
        self
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn is_zero(&self) -> bool {
        (matches!(self.source, Source::Zero) || self.scale == 0.0) && self.offset == 0.0
    }

    /// Value at an arbitrary point, or `None` for fields only known on the
    /// interior nodes.
    pub fn eval_point(&self, x: f64, y: Option<f64>, t: f64) -> Option<Result<f64>> {
        let raw = match &self.source {
            Source::Zero => Ok(0.0),
            Source::Grid(_) => return None,
            Source::Expr(e) => e.eval(&Bindings::new(x, y, t)).map_err(Error::from),
            Source::Func(f) => Ok(f(x, y, t)),
        };
        Some(raw.and_then(|v| {
            let v = self.scale * v + self.offset;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFiniteField {
                    x: std::iter::once(x).chain(y).collect(),
                    t,
                })
            }
        }))
    }

    /// Whether the field can vary in time. Closures are assumed to.
    pub fn is_time_dependent(&self) -> bool {
        match &self.source {
            Source::Zero | Source::Grid(_) => false,
            Source::Expr(e) => e.mentions(Var::T),
            Source::Func(_) => true,
        }
    }

    /// Values on the interior nodes at time `t`.
    pub fn sample_at(&self, domain: &DomainSpec, t: f64) -> Result<DVector<f64>> {
        let n = domain.n_dof();
        if let Source::Grid(v) = &self.source {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: v.len(),
                });
            }
            return Ok(v.map(|x| self.scale * x + self.offset));
        }
        let mut out = DVector::zeros(n);
        for p in 0..n {
            let (x, y) = domain.node(p);
            out[p] = self.eval_point(x, y, t).expect("pointwise source")?;
        }
        Ok(out)
    }

    /// Samples at the half steps `t_{k+1/2}` of the time grid.
    pub fn sample(&self, domain: &DomainSpec, tg: &TimeGrid) -> Result<SampledField> {
        if self.is_zero() {
            return Ok(SampledField::Zero);
        }
        if !self.is_time_dependent() {
            return Ok(SampledField::Steady(self.sample_at(domain, 0.0)?));
        }
        let steps = (0..tg.steps())
            .map(|k| self.sample_at(domain, tg.half_step(k)))
            .collect::<Result<Vec<_>>>()?;
        Ok(SampledField::Unsteady(steps))
    }
}

/// Grid samples of a space-time field at the half steps of a time grid.
#[derive(Debug, Clone, PartialEq)]
pub enum SampledField {
    Zero,
    Steady(DVector<f64>),
    Unsteady(Vec<DVector<f64>>),
}

impl SampledField {
    pub fn is_zero(&self) -> bool {
        matches!(self, SampledField::Zero)
    }

    /// Values for step `k` (covering `[t_k, t_{k+1}]`), `None` when zero.
    pub fn at(&self, k: usize) -> Option<&DVector<f64>> {
        match self {
            SampledField::Zero => None,
            SampledField::Steady(v) => Some(v),
            SampledField::Unsteady(v) => Some(&v[k]),
        }
    }

    pub fn check_len(&self, n_dof: usize, steps: usize) -> Result<()> {
        let bad = |found| Err(Error::DimensionMismatch { expected: n_dof, found });
        match self {
            SampledField::Zero => Ok(()),
            SampledField::Steady(v) if v.len() != n_dof => bad(v.len()),
            SampledField::Unsteady(v) if v.len() != steps => Err(Error::DimensionMismatch {
                expected: steps,
                found: v.len(),
            }),
            SampledField::Unsteady(v) => match v.iter().find(|s| s.len() != n_dof) {
                Some(s) => bad(s.len()),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }

    pub fn scaled(&self, s: f64) -> SampledField {
        match self {
            SampledField::Zero => SampledField::Zero,
            SampledField::Steady(v) => SampledField::Steady(v * s),
            SampledField::Unsteady(v) => SampledField::Unsteady(v.iter().map(|x| x * s).collect()),
        }
    }

    /// Pointwise sum of two sampled fields over the same grid.
    pub fn plus(&self, other: &SampledField) -> SampledField {
        use SampledField::*;
        match (self, other) {
            (Zero, o) | (o, Zero) => o.clone(),
            (Steady(a), Steady(b)) => Steady(a + b),
            (Steady(a), Unsteady(b)) | (Unsteady(b), Steady(a)) => {
                Unsteady(b.iter().map(|v| v + a).collect())
            }
            (Unsteady(a), Unsteady(b)) => Unsteady(a.iter().zip(b).map(|(x, y)| x + y).collect()),
        }
    }

    /// Adds a constant to every sample (turns `Zero` into a steady field).
    pub fn offset(&self, c: f64, n_dof: usize) -> SampledField {
        match self {
            SampledField::Zero => SampledField::Steady(DVector::from_element(n_dof, c)),
            SampledField::Steady(v) => SampledField::Steady(v.add_scalar(c)),
            SampledField::Unsteady(v) => {
                SampledField::Unsteady(v.iter().map(|x| x.add_scalar(c)).collect())
            }
        }
    }

    /// Largest absolute sample value.
    pub fn max_abs(&self) -> f64 {
        match self {
            SampledField::Zero => 0.0,
            SampledField::Steady(v) => v.amax(),
            SampledField::Unsteady(v) => v.iter().map(|x| x.amax()).fold(0.0, f64::max),
        }
    }
}

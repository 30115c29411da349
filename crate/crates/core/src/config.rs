//! Run configuration: a TOML document describing domain, time grid, operator,
//! perturbation, forcing, control and output, plus the named presets.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::control::{K0Choice, LocalizationSpec, K0_MARGIN};
use crate::error::{Error, Result};
use crate::evolution::check_exponent;
use crate::expr::{self, Bindings, Var};
use crate::field::{SpaceTimeField, SpatialField};
use crate::periodic::{SolveOptions, DEFECT_TOL, RANK_TOL};
use crate::scenarios::neutralize;
use crate::spectral::{build_operator, eigendecompose, DiscreteOperator, DomainSpec, EigenBasis, OperatorSpec, Subdomain};
use crate::time::TimeGrid;

/// A number, or a constant expression such as `"pi/2"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Num(f64),
    Expr(String),
}

impl Scalar {
    fn value(&self, path: &str) -> Result<f64> {
        match self {
            Scalar::Num(v) => Ok(*v),
            Scalar::Expr(s) => {
                let e = expr::parse(s).map_err(|err| Error::config(path, err.to_string()))?;
                if [Var::X, Var::Y, Var::T].into_iter().any(|v| e.mentions(v)) {
                    return Err(Error::config(path, "expected a constant expression"));
                }
                e.eval(&Bindings::new(0.0, Some(0.0), 0.0))
                    .map_err(|err| Error::config(path, err.to_string()))
            }
        }
    }

    fn spatial(&self, path: &str) -> Result<SpatialField> {
        match self {
            Scalar::Num(v) => Ok(SpatialField::Const(*v)),
            Scalar::Expr(s) => SpatialField::parse(s).map_err(|err| Error::config(path, err.to_string())),
        }
    }
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Num(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub x: [Scalar; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<[Scalar; 2]>,
    #[serde(default = "default_n")]
    pub n: usize,
}

fn default_n() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    #[serde(default = "one")]
    pub period: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorShift {
    #[default]
    None,
    /// Move the potential so the first eigenvalue is exactly zero.
    FirstEigenvalue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSection {
    #[serde(default = "unit_scalar")]
    pub a: Scalar,
    /// Diffusion along `y` on rectangles; defaults to `a`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ay: Option<Scalar>,
    #[serde(default = "zero_scalar")]
    pub c: Scalar,
    #[serde(default = "one")]
    pub lambda_star: f64,
    #[serde(default)]
    pub shift: OperatorShift,
}

fn unit_scalar() -> Scalar {
    Scalar::Num(1.0)
}

fn zero_scalar() -> Scalar {
    Scalar::Num(0.0)
}

impl Default for OperatorSection {
    fn default() -> Self {
        Self {
            a: unit_scalar(),
            ay: None,
            c: zero_scalar(),
            lambda_star: 1.0,
            shift: OperatorShift::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationShift {
    #[default]
    None,
    /// Subtract the ground-state eigenvalue of the perturbed operator so it
    /// becomes exactly resonant (steady perturbations only).
    Neutralize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSection {
    #[serde(default = "zero_str")]
    pub expr: String,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default)]
    pub shift: PerturbationShift,
}

fn zero_str() -> String {
    "0".into()
}

fn default_q() -> f64 {
    4.0
}

impl Default for PerturbationSection {
    fn default() -> Self {
        Self {
            expr: zero_str(),
            scale: 1.0,
            q: default_q(),
            shift: PerturbationShift::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingSection {
    #[serde(default = "zero_str")]
    pub expr: String,
}

impl Default for ForcingSection {
    fn default() -> Self {
        Self { expr: zero_str() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum K0Setting {
    Fixed(usize),
    Keyword(String),
}

impl Default for K0Setting {
    fn default() -> Self {
        K0Setting::Keyword("auto".into())
    }
}

impl K0Setting {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(K0Setting::Keyword(s.into()));
        }
        s.parse()
            .map(K0Setting::Fixed)
            .map_err(|_| Error::config("control.K0", format!("expected `auto` or an integer, got `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    #[serde(rename = "K0", default)]
    pub k0: K0Setting,
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// Pieces `[x0, x1]` (or `[x0, x1, y0, y1]` on rectangles).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<Vec<Vec<Scalar>>>,
    /// Time intervals `[t0, t1]` inside `[0, T]`.
    #[serde(rename = "E", default, skip_serializing_if = "Option::is_none")]
    pub e: Option<Vec<[Scalar; 2]>>,
}

fn default_margin() -> f64 {
    K0_MARGIN
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            k0: K0Setting::default(),
            margin: K0_MARGIN,
            omega: None,
            e: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
    #[serde(default = "default_defect_tol")]
    pub defect_tol: f64,
    /// Head size for the `periodic` command.
    #[serde(default)]
    pub k: usize,
}

fn default_rank_tol() -> f64 {
    RANK_TOL
}

fn default_defect_tol() -> f64 {
    DEFECT_TOL
}

impl Default for SolveSection {
    fn default() -> Self {
        Self {
            rank_tol: RANK_TOL,
            defect_tol: DEFECT_TOL,
            k: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Multipliers applied to `perturbation.scale`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scales: Vec<f64>,
    /// Measures `m` of `E = [0, m]`; each run is localized to `control.omega`.
    #[serde(rename = "m_E", default, skip_serializing_if = "Vec::is_empty")]
    pub m_e: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<String> {
    vec!["json".into(), "csv".into()]
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_out(),
            formats: default_formats(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Name used for the output subdirectory.
    #[serde(default = "default_name")]
    pub name: String,
    pub domain: DomainSection,
    #[serde(default = "default_time")]
    pub time: TimeSection,
    #[serde(default)]
    pub operator: OperatorSection,
    #[serde(default)]
    pub perturbation: PerturbationSection,
    #[serde(default)]
    pub forcing: ForcingSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlSection>,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_name() -> String {
    "run".into()
}

fn default_time() -> TimeSection {
    TimeSection {
        period: 1.0,
        steps: None,
    }
}

/// Names of the built-in presets.
pub const PRESETS: [&str; 5] = [
    "section3-exists",
    "section3-fails",
    "section3-stabilized",
    "sweep-epsilon",
    "sweep-mE",
];

/// TOML text of a built-in preset.
pub fn preset_source(name: &str) -> Option<&'static str> {
    Some(match name {
        "section3-exists" => include_str!("../presets/section3-exists.toml"),
        "section3-fails" => include_str!("../presets/section3-fails.toml"),
        "section3-stabilized" => include_str!("../presets/section3-stabilized.toml"),
        "sweep-epsilon" => include_str!("../presets/sweep-epsilon.toml"),
        "sweep-mE" => include_str!("../presets/sweep-mE.toml"),
        _ => return None,
    })
}

pub fn preset(name: &str) -> Result<RunConfig> {
    let src = preset_source(name).ok_or_else(|| {
        Error::config("preset", format!("unknown preset `{name}`; known: {}", PRESETS.join(", ")))
    })?;
    parse_config(src)
}

/// Reads and validates a config file. `preset:NAME` loads a built-in preset.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    if let Some(name) = path.to_str().and_then(|s| s.strip_prefix("preset:")) {
        return preset(name);
    }
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|err| {
        let path = err
            .span()
            .map(|s| line_of(text, s.start).to_string())
            .unwrap_or_else(|| "document".into());
        Error::config(path, err.message().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn line_of(text: &str, offset: usize) -> String {
    let line = text[..offset.min(text.len())].matches('\n').count() + 1;
    format!("line {line}")
}

/// Everything a command needs, resolved from a [`RunConfig`].
pub struct Resolved {
    pub op: DiscreteOperator,
    pub basis: EigenBasis,
    pub grid: TimeGrid,
    /// Perturbation in solver convention, scaled and shifted as configured.
    pub e: SpaceTimeField,
    pub f: SpaceTimeField,
    pub q: f64,
    pub k0: K0Choice,
    pub solve: SolveOptions,
    /// Time-independent perturbation values before any neutralizing shift.
    pub e_steady: Option<DVector<f64>>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let domain = self.domain_spec()?;
        if !(self.time.period > 0.0 && self.time.period.is_finite()) {
            return Err(Error::config("time.period", "must be positive"));
        }
        if let Some(s) = self.time.steps {
            if s < TimeGrid::MIN_STEPS {
                return Err(Error::config("time.steps", format!("need at least {}", TimeGrid::MIN_STEPS)));
            }
        }
        self.operator_spec()?;
        check_exponent(self.perturbation.q, domain.dim())?;
        let e = self.perturbation_field()?;
        if self.perturbation.shift == PerturbationShift::Neutralize && e.is_time_dependent() {
            return Err(Error::config("perturbation.shift", "`neutralize` needs a time-independent perturbation"));
        }
        self.forcing_field()?;
        if let Some(c) = &self.control {
            self.k0_choice()?;
            if !(c.margin > 0.0 && c.margin < 1.0) {
                return Err(Error::config("control.margin", "must lie in (0, 1)"));
            }
            let grid = TimeGrid::new(self.time.period, TimeGrid::MIN_STEPS)?;
            self.localization(&domain, &grid)?;
        }
        if self.solve.rank_tol <= 0.0 || self.solve.defect_tol <= 0.0 {
            return Err(Error::config("solve", "tolerances must be positive"));
        }
        for (i, m) in self.sweep.m_e.iter().enumerate() {
            if !(*m > 0.0 && *m <= self.time.period) {
                return Err(Error::config(format!("sweep.m_E[{i}]"), "must lie in (0, T]"));
            }
        }
        if !self.sweep.m_e.is_empty() && self.control.as_ref().is_none_or(|c| c.omega.is_none()) {
            return Err(Error::config("sweep.m_E", "needs control.omega"));
        }
        for f in &self.output.formats {
            if f != "json" && f != "csv" {
                return Err(Error::config("output.formats", format!("unknown format `{f}`")));
            }
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, steps: Option<usize>, scale: Option<f64>, k0: Option<K0Setting>) -> Result<()> {
        if let Some(s) = steps {
            self.time.steps = Some(s);
        }
        if let Some(s) = scale {
            self.perturbation.scale = s;
        }
        if let Some(k) = k0 {
            self.control.get_or_insert_with(ControlSection::default).k0 = k;
        }
        self.validate()
    }

    pub fn domain_spec(&self) -> Result<DomainSpec> {
        let pair = |p: &[Scalar; 2], axis: &str| -> Result<(f64, f64)> {
            Ok((p[0].value(&format!("domain.{axis}[0]"))?, p[1].value(&format!("domain.{axis}[1]"))?))
        };
        let x = pair(&self.domain.x, "x")?;
        let spec = match &self.domain.y {
            None => DomainSpec::interval(x.0, x.1, self.domain.n),
            Some(y) => DomainSpec::rectangle(x, pair(y, "y")?, self.domain.n),
        };
        spec.map_err(|err| Error::config("domain", err.to_string()))
    }

    pub fn operator_spec(&self) -> Result<OperatorSpec> {
        let o = &self.operator;
        let mut spec = OperatorSpec::new(o.a.spatial("operator.a")?, o.c.spatial("operator.c")?, o.lambda_star);
        if let Some(ay) = &o.ay {
            spec.a_y = Some(ay.spatial("operator.ay")?);
        }
        Ok(spec)
    }

    fn perturbation_field(&self) -> Result<SpaceTimeField> {
        let e = SpaceTimeField::parse(&self.perturbation.expr)
            .map_err(|err| Error::config("perturbation.expr", err.to_string()))?;
        Ok(e.scaled(self.perturbation.scale))
    }

    fn forcing_field(&self) -> Result<SpaceTimeField> {
        SpaceTimeField::parse(&self.forcing.expr).map_err(|err| Error::config("forcing.expr", err.to_string()))
    }

    pub fn k0_choice(&self) -> Result<K0Choice> {
        let c = self.control.clone().unwrap_or_default();
        match c.k0 {
            K0Setting::Fixed(0) => Err(Error::config("control.K0", "must be at least 1")),
            K0Setting::Fixed(k) => Ok(K0Choice::Fixed(k)),
            K0Setting::Keyword(s) if s == "auto" => Ok(K0Choice::Auto { margin: c.margin }),
            K0Setting::Keyword(s) => Err(Error::config("control.K0", format!("expected `auto` or an integer, got `{s}`"))),
        }
    }

    /// `ω` pieces in numbers; `None` when no control section or no `omega`.
    pub fn omega_boxes(&self) -> Result<Option<Vec<Vec<f64>>>> {
        let Some(pieces) = self.control.as_ref().and_then(|c| c.omega.as_ref()) else {
            return Ok(None);
        };
        pieces
            .iter()
            .enumerate()
            .map(|(i, piece)| {
                piece
                    .iter()
                    .enumerate()
                    .map(|(j, v)| v.value(&format!("control.omega[{i}][{j}]")))
                    .collect()
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    pub fn e_intervals(&self) -> Result<Option<Vec<(f64, f64)>>> {
        let Some(iv) = self.control.as_ref().and_then(|c| c.e.as_ref()) else {
            return Ok(None);
        };
        iv.iter()
            .enumerate()
            .map(|(i, p)| Ok((p[0].value(&format!("control.E[{i}][0]"))?, p[1].value(&format!("control.E[{i}][1]"))?)))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Subdomain `ω` (whole domain when unset).
    pub fn omega(&self, domain: &DomainSpec) -> Result<Subdomain> {
        match self.omega_boxes()? {
            None => Ok(Subdomain::whole(domain)),
            Some(b) => Subdomain::from_boxes(domain, &b),
        }
    }

    /// `ω × E` with `E` defaulting to `[0, T]`.
    pub fn localization(&self, domain: &DomainSpec, grid: &TimeGrid) -> Result<LocalizationSpec> {
        let omega = self.omega(domain)?;
        match self.e_intervals()? {
            None => LocalizationSpec::full(omega, grid),
            Some(iv) => LocalizationSpec::new(omega, &iv, grid),
        }
    }

    pub fn output_dir(&self, base: Option<&Path>) -> PathBuf {
        base.map(Path::to_path_buf).unwrap_or_else(|| self.output.dir.clone()).join(&self.name)
    }

    pub fn wants(&self, format: &str) -> bool {
        self.output.formats.iter().any(|f| f == format)
    }

    /// Builds operator, basis, time grid and fields.
    pub fn resolve(&self) -> Result<Resolved> {
        let domain = self.domain_spec()?;
        let mut op = build_operator(&domain, &self.operator_spec()?)?;
        let mut basis = eigendecompose(&op)?;
        if self.operator.shift == OperatorShift::FirstEigenvalue {
            let l1 = basis.eigenvalue(0);
            op = op.with_potential_shift(-l1);
            basis = basis.with_eigenvalue_shift(-l1);
        }
        let lambda_max = basis.eigenvalue(basis.len() - 1);
        let grid = match self.time.steps {
            Some(s) => TimeGrid::new(self.time.period, s)?,
            None => TimeGrid::with_default_steps(self.time.period, lambda_max)?,
        };
        let raw = self.perturbation_field()?;
        let e_steady = if raw.is_time_dependent() {
            None
        } else {
            Some(raw.sample_at(&domain, 0.0)?)
        };
        let e = match (self.perturbation.shift, &e_steady) {
            (PerturbationShift::Neutralize, Some(v)) => SpaceTimeField::from_grid(neutralize(&op, v)?.0),
            _ => raw,
        };
        Ok(Resolved {
            op,
            basis,
            grid,
            e,
            f: self.forcing_field()?,
            q: self.perturbation.q,
            k0: self.k0_choice()?,
            solve: SolveOptions {
                rank_tol: self.solve.rank_tol,
                defect_tol: self.solve.defect_tol,
            },
            e_steady,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [domain]
        x = [0, "pi"]
        n = 16
        [operator]
        c = -1
    "#;

    #[test]
    fn minimal_config() {
        let c = parse_config(MINIMAL).unwrap();
        let d = c.domain_spec().unwrap();
        assert_eq!(d.x, (0.0, std::f64::consts::PI));
        assert_eq!(c.k0_choice().unwrap(), K0Choice::Auto { margin: 0.5 });
        let r = c.resolve().unwrap();
        assert_eq!(r.grid.steps(), 64);
    }

    #[test]
    fn validation_paths() {
        let err = parse_config(&format!("{MINIMAL}\n[perturbation]\nq = 2")).unwrap_err();
        assert!(matches!(err, Error::BadExponent { .. }));
        let err = parse_config(&format!("{MINIMAL}\n[control]\nomega = [[3, 4]]")).unwrap_err();
        assert!(matches!(err, Error::InvalidLocalization(_)), "{err}");
        let err = parse_config(&format!("{MINIMAL}\n[forcing]\nexpr = \"sin(\"")).unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "forcing.expr"), "{err}");
        let err = parse_config(&format!("{MINIMAL}\n[control]\nK0 = \"some\"")).unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "control.K0"), "{err}");
        let err = parse_config("[domain]\nx = [0, 1]\nbogus = 1").unwrap_err();
        assert!(matches!(err, Error::Config { .. }), "{err}");
    }

    #[test]
    fn presets_load() {
        for name in PRESETS {
            let c = preset(name).unwrap();
            assert_eq!(c.name, name);
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn overrides() {
        let mut c = parse_config(MINIMAL).unwrap();
        c.apply_overrides(Some(128), Some(0.5), Some(K0Setting::parse("3").unwrap())).unwrap();
        assert_eq!(c.time.steps, Some(128));
        assert_eq!(c.k0_choice().unwrap(), K0Choice::Fixed(3));
        assert!(c.apply_overrides(Some(4), None, None).is_err());
    }
}

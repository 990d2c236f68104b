//! Run configuration in TOML.
//!
//! Every numeric value may be written as an expression: `"2pi*1.14e6"`,
//! `"-0.85pi"`, `"-153deg"`, `"-0.06kappa"`, `"0.24pi/omega_m"`. The
//! names `kappa` and `omega_m` refer to the resolved parameter values.
//! All physical inputs are SI with angular frequencies in rad/s.
//!
//! Missing parameters take the table defaults. Parameters derived from
//! others (Γ_m from Q, the η_f/η_i split, κ_in and the detunings relative
//! to κ, the LO amplitude from the auxiliary power) are re-derived unless
//! given explicitly; `eta_loop = 0` blocks the feedback signal while
//! keeping the auxiliary drive. Writing a loaded config back out and loading it again
//! reproduces it exactly.

use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::fit::{FitStage, StageKind};
use crate::params::SystemParams;
use crate::spectra::{FrequencyGrid, IntegrationPolicy, Quantity};
use crate::stability::{LoopBound, Method, Region};
use crate::sweep::{AxisKind, SweepAxis, SweepOptions};
use crate::units::TWO_PI;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub params: SystemParams,
    #[serde(default)]
    pub integration: IntegrationPolicy,
    #[serde(default)]
    pub stability: StabilityConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    ArgumentPrinciple,
    SufficientBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundName {
    EigenLocus,
    SmallGain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    pub method: MethodName,
    /// Loop bound used by `sufficient-bound`.
    pub bound: BoundName,
    /// Required gain margin factor of the loop bound, ≥ 1.
    pub margin: f64,
    /// Search rectangle in rad/s; default is a provable bound on all zeros.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Region>,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            method: MethodName::ArgumentPrinciple,
            bound: BoundName::EigenLocus,
            margin: 1.0,
            region: None,
        }
    }
}

impl StabilityConfig {
    pub fn method(&self) -> Method {
        match (self.method, self.bound) {
            (MethodName::ArgumentPrinciple, _) => Method::ArgumentPrinciple,
            (MethodName::SufficientBound, BoundName::EigenLocus) => {
                Method::SufficientBound(LoopBound::EigenLocus { margin: self.margin })
            }
            (MethodName::SufficientBound, BoundName::SmallGain) => {
                Method::SufficientBound(LoopBound::SmallGain { margin: self.margin })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridShape {
    Linear,
    /// Linear window plus a geometric ladder toward the center.
    LogAugmented,
}

/// Frequency grid for `simulate`, rad/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    /// Defaults to Ω_m.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<f64>,
    pub halfwidth: f64,
    pub points: usize,
    pub shape: GridShape,
    /// Finest spacing of the log ladder; defaults to Γ_m.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finest: Option<f64>,
    pub quantities: Vec<Quantity>,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig {
            center: None,
            halfwidth: TWO_PI * 5e3,
            points: 801,
            shape: GridShape::Linear,
            finest: None,
            quantities: vec![Quantity::SYdet, Quantity::Sqq],
        }
    }
}

impl SpectrumConfig {
    pub fn grid(&self, p: &SystemParams) -> Result<FrequencyGrid> {
        let c = self.center.unwrap_or(p.omega_m);
        match self.shape {
            GridShape::Linear => FrequencyGrid::linear_window(c, self.halfwidth, self.points),
            GridShape::LogAugmented => {
                FrequencyGrid::log_augmented(c, self.halfwidth, self.points, self.finest.unwrap_or(p.gamma_m))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    pub kind: AxisKind,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl AxisConfig {
    pub fn axis(&self) -> Result<SweepAxis> {
        SweepAxis::linspace(self.kind, self.lo, self.hi, self.points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis1: AxisConfig,
    pub axis2: AxisConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Spectrum files per stage; stages without data are skipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dbc1: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dbc2: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cfc: Option<PathBuf>,
    /// Fit amplitude/offset nuisances in DBC1.
    #[serde(default)]
    pub nuisance: bool,
    /// Fit Δ_v in DBC2 instead of holding it fixed.
    #[serde(default)]
    pub fit_delta_v: bool,
}

impl FitConfig {
    pub fn stage(&self, kind: StageKind) -> FitStage {
        let mut s = FitStage::new(kind);
        if kind == StageKind::Dbc1 && self.nuisance {
            s = s.with_nuisance();
        }
        if kind == StageKind::Dbc2 && self.fit_delta_v {
            s = s.with_delta_v();
        }
        s
    }
}

impl RunConfig {
    pub fn defaults() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            params: SystemParams::table_defaults(),
            integration: IntegrationPolicy::default(),
            stability: StabilityConfig::default(),
            spectrum: SpectrumConfig::default(),
            sweep: None,
            fit: None,
        }
    }

    pub fn sweep_options(&self) -> SweepOptions {
        SweepOptions {
            method: self.stability.method(),
            policy: self.integration.clone(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut root: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        match root.get("schema_version") {
            Some(Value::Integer(v)) if *v == SCHEMA_VERSION as i64 => {}
            Some(v) => return Err(Error::Config(format!("unsupported schema_version {v}"))),
            None => return Err(Error::Config("missing schema_version".into())),
        }
        let user = match root.remove("params") {
            Some(Value::Table(t)) => t,
            Some(_) => return Err(Error::Config("`params` must be a table".into())),
            None => Table::new(),
        };
        let params = resolve_params(user)?;
        let ctx = Context {
            kappa: params.kappa,
            omega_m: params.omega_m,
        };
        for (_, v) in root.iter_mut() {
            eval_strings(v, &ctx)?;
        }
        root.insert(
            "params".into(),
            Value::try_from(&params).map_err(|e| Error::Config(e.to_string()))?,
        );
        let cfg: RunConfig = Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        let mut v = Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        if let Value::Table(root) = &mut v {
            root.insert("params".into(), params_to_value(&self.params)?);
        }
        toml::to_string(&v).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let pol = &self.integration;
        if !(pol.rel_tol > 0.0 && pol.rel_tol < 1.0) {
            return Err(Error::invalid("integration.rel_tol", "must lie in (0, 1)"));
        }
        if !(pol.window_linewidths > 0.0) || !(pol.window_kappas > 0.0) || pol.max_evaluations < 21 {
            return Err(Error::invalid(
                "integration",
                "windows must be positive and the budget at least 21",
            ));
        }
        if !(self.stability.margin >= 1.0) || !self.stability.margin.is_finite() {
            return Err(Error::invalid("stability.margin", "must be finite and at least 1"));
        }
        self.spectrum.grid(&self.params)?;
        if self.spectrum.quantities.is_empty() {
            return Err(Error::invalid("spectrum.quantities", "at least one quantity"));
        }
        if let Some(s) = &self.sweep {
            s.axis1.axis()?;
            s.axis2.axis()?;
        }
        Ok(())
    }
}

/// Writes `gamma_target = "none"` for the θ-locked mode so that omitting
/// the key keeps meaning "use the default".
fn params_to_value(p: &SystemParams) -> Result<Value> {
    let mut v = Value::try_from(p).map_err(|e| Error::Config(e.to_string()))?;
    if let Value::Table(t) = &mut v {
        if p.gamma_target.is_none() {
            t.insert("gamma_target".into(), Value::String("none".into()));
        }
    }
    Ok(v)
}

fn resolve_params(mut user: Table) -> Result<SystemParams> {
    let defaults = SystemParams::table_defaults();
    let theta_locked = matches!(user.get("gamma_target"), Some(Value::String(s)) if s == "none");
    if theta_locked {
        user.remove("gamma_target");
    }
    let has = |k: &str| user.contains_key(k);
    let given = (
        has("gamma_m"),
        has("kappa_in"),
        has("delta_h"),
        has("delta_v"),
        has("eta_f"),
        has("eta_i"),
        has("tau"),
    );
    let lo_given = matches!(user.get("displacement"), Some(Value::Table(t)) if t.contains_key("lo_amplitude"));

    // κ and Ω_m first, so the others may refer to them.
    let mut ctx = Context {
        kappa: defaults.kappa,
        omega_m: defaults.omega_m,
    };
    for key in ["kappa", "omega_m"] {
        if let Some(v) = user.get_mut(key) {
            eval_strings(v, &ctx)?;
            let x = v
                .as_float()
                .or_else(|| v.as_integer().map(|i| i as f64))
                .ok_or_else(|| Error::Config(format!("params.{key} must be a number")))?;
            if key == "kappa" {
                ctx.kappa = x;
            } else {
                ctx.omega_m = x;
            }
        }
    }
    for (_, v) in user.iter_mut() {
        eval_strings(v, &ctx)?;
    }

    let mut merged = match Value::try_from(&defaults).map_err(|e| Error::Config(e.to_string()))? {
        Value::Table(t) => t,
        _ => unreachable!(),
    };
    merge(&mut merged, user);
    let mut p: SystemParams = Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    if theta_locked {
        p.gamma_target = None;
    }

    let r = p.kappa / defaults.kappa;
    if !given.1 {
        p.kappa_in = defaults.kappa_in * r;
    }
    if !given.2 {
        p.delta_h = defaults.delta_h * r;
    }
    if !given.3 {
        p.delta_v = defaults.delta_v * r;
    }
    if !given.4 {
        // η = 0 means the signal path is blocked; the auxiliary drive
        // keeps the default forward efficiency.
        p.eta_f = if p.eta_loop > 0.0 {
            p.eta_loop.sqrt()
        } else {
            defaults.eta_f
        };
    }
    if !given.5 {
        p.eta_i = p.eta_loop.sqrt();
    }
    if !given.6 {
        p.tau = defaults.tau * defaults.omega_m / p.omega_m;
    }
    if !given.0 {
        p.gamma_m = p.omega_m / p.q_factor;
    }
    if !lo_given {
        p.displacement.lo_amplitude = p.lo_amplitude_for_aux_power();
    }
    p.validate()?;
    Ok(p)
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

struct Context {
    kappa: f64,
    omega_m: f64,
}

/// Replaces every string that parses as an expression by its value.
/// Other strings (labels, paths) are left alone.
fn eval_strings(v: &mut Value, ctx: &Context) -> Result<()> {
    match v {
        Value::String(s) => {
            if let Some(x) = looks_numeric(s).then(|| eval_expr(s, ctx)).transpose()? {
                *v = Value::Float(x);
            }
        }
        Value::Table(t) => {
            for (_, x) in t.iter_mut() {
                eval_strings(x, ctx)?;
            }
        }
        Value::Array(a) => {
            for x in a.iter_mut() {
                eval_strings(x, ctx)?;
            }
        }
        _ => {}
    }
    Ok(())
}

/// Strings that start like a number or a known constant are expressions.
fn looks_numeric(s: &str) -> bool {
    let t = s.trim_start_matches(|c: char| c == '-' || c == '+' || c == '(' || c.is_whitespace());
    t.starts_with(|c: char| c.is_ascii_digit() || c == '.')
        || ["pi", "kappa", "omega_m"].iter().any(|k| {
            t.strip_prefix(k)
                .is_some_and(|r| !r.starts_with(|c: char| c.is_alphanumeric() || c == '_'))
        })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(s: &str) -> Result<Vec<Tok>> {
    let b = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < b.len() && ((b[i] as char).is_ascii_digit() || b[i] == b'.') {
                i += 1;
            }
            // Exponent only when followed by digits, so "2e" is not eaten.
            if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
                let mut j = i + 1;
                if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
                    j += 1;
                }
                if j < b.len() && (b[j] as char).is_ascii_digit() {
                    while j < b.len() && (b[j] as char).is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let t = &s[start..i];
            out.push(Tok::Num(
                t.parse()
                    .map_err(|_| Error::Config(format!("bad number `{t}` in `{s}`")))?,
            ));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < b.len() && ((b[i] as char).is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            out.push(Tok::Ident(s[start..i].to_string()));
        } else if "+-*/^()".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else {
            return Err(Error::Config(format!("unexpected `{c}` in `{s}`")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Tok>,
    pos: usize,
    ctx: &'a Context,
    src: &'a str,
}

impl Parser<'_> {
    fn err(&self, what: &str) -> Error {
        Error::Config(format!("{what} in expression `{}`", self.src))
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn expr(&mut self) -> Result<f64> {
        let mut v = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let r = self.term()?;
            v = if c == '+' { v + r } else { v - r };
        }
        Ok(v)
    }

    fn term(&mut self) -> Result<f64> {
        let mut v = self.unary()?;
        loop {
            match self.peek().cloned() {
                Some(Tok::Op(c @ ('*' | '/'))) => {
                    self.pos += 1;
                    let r = self.unary()?;
                    v = if c == '*' { v * r } else { v / r };
                }
                // Implicit product: "0.85pi", "2pi", "-0.06kappa", "2(pi)".
                Some(Tok::Ident(_)) | Some(Tok::Op('(')) | Some(Tok::Num(_)) => v *= self.power()?,
                _ => return Ok(v),
            }
        }
    }

    fn unary(&mut self) -> Result<f64> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                Ok(-self.unary()?)
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<f64> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let e = self.unary()?;
            return Ok(base.powf(e));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<f64> {
        let t = self.peek().cloned().ok_or_else(|| self.err("unexpected end"))?;
        self.pos += 1;
        match t {
            Tok::Num(v) => Ok(v),
            Tok::Ident(name) => match name.as_str() {
                "pi" => Ok(std::f64::consts::PI),
                "deg" => Ok(std::f64::consts::PI / 180.0),
                "kappa" => Ok(self.ctx.kappa),
                "omega_m" => Ok(self.ctx.omega_m),
                _ => Err(self.err(&format!("unknown name `{name}`"))),
            },
            Tok::Op('(') => {
                let v = self.expr()?;
                match self.peek() {
                    Some(Tok::Op(')')) => {
                        self.pos += 1;
                        Ok(v)
                    }
                    _ => Err(self.err("missing `)`")),
                }
            }
            Tok::Op(c) => Err(self.err(&format!("unexpected `{c}`"))),
        }
    }
}

fn eval_expr(s: &str, ctx: &Context) -> Result<f64> {
    let mut p = Parser {
        toks: tokenize(s)?,
        pos: 0,
        ctx,
        src: s,
    };
    let v = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(p.err("trailing input"));
    }
    if !v.is_finite() {
        return Err(p.err("non-finite value"));
    }
    Ok(v)
}

/// Evaluates a quantity expression with the default κ and Ω_m.
pub fn parse_quantity(s: &str) -> Result<f64> {
    let d = SystemParams::table_defaults();
    eval_expr(
        s,
        &Context {
            kappa: d.kappa,
            omega_m: d.omega_m,
        },
    )
}

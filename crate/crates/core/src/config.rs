//! Run configuration: a line-oriented `key = value` format with dotted keys.
//!
//! ```text
//! # comment
//! dim = 1
//! domain.length = 1.0
//! grid.n = 64
//! time.t_final = 0.5
//! time.dt = 0.001
//! scheme = imex
//! bc = neumann
//! coeff.a11 = 1.0
//! ...
//! initial.u = bump(0.5, 0.1, 2.0)
//! initial.v = cosine(1, 0.5, 1.0)
//! ```
//!
//! Unknown keys and duplicates are rejected.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::adjoint::{AdjointMode, AdjointRhsKind};
use crate::algebra::{check_conditions, max_alpha, Coefficients, ALPHA_SAMPLE_BUDGET};
use crate::error::{Result, SktError};
use crate::forward::{SchemeKind, TimeGrid};
use crate::grid::{BoundaryCondition, FieldPair, Grid};

/// Named initial or terminal data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Preset {
    Zero,
    Constant(f64),
    /// `amplitude · exp(−|x − center|² / width²)`, same center on every axis.
    Bump {
        center: f64,
        width: f64,
        amplitude: f64,
    },
    /// `offset + amplitude · Π cos(kπ x_a / L)`.
    Cosine {
        k: u32,
        amplitude: f64,
        offset: f64,
    },
}

impl Preset {
    pub fn evaluate(&self, grid: &Grid) -> Vec<f64> {
        let length = grid.length();
        let dim = grid.dim();
        grid.sample(|x| match *self {
            Preset::Zero => 0.0,
            Preset::Constant(c) => c,
            Preset::Bump {
                center,
                width,
                amplitude,
            } => {
                let r2: f64 = x[..dim].iter().map(|xa| (xa - center).powi(2)).sum();
                amplitude * (-r2 / (width * width)).exp()
            }
            Preset::Cosine {
                k,
                amplitude,
                offset,
            } => {
                let prod: f64 = x[..dim]
                    .iter()
                    .map(|xa| (k as f64 * PI * xa / length).cos())
                    .product();
                offset + amplitude * prod
            }
        })
    }

    pub fn parse(text: &str) -> std::result::Result<Preset, String> {
        let text = text.trim();
        if text == "zero" {
            return Ok(Preset::Zero);
        }
        let (name, args) = text
            .strip_suffix(')')
            .and_then(|t| t.split_once('('))
            .ok_or_else(|| format!("unrecognized preset `{text}`"))?;
        let args: Vec<&str> = args.split(',').map(str::trim).collect();
        let num = |i: usize| -> std::result::Result<f64, String> {
            let value: f64 = args[i]
                .parse()
                .map_err(|_| format!("argument `{}` of {name} is not a number", args[i]))?;
            if value.is_finite() {
                Ok(value)
            } else {
                Err(format!("argument `{}` of {name} is not finite", args[i]))
            }
        };
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(format!("{name} takes {n} arguments, got {}", args.len()))
            }
        };
        match name.trim() {
            "constant" => {
                arity(1)?;
                Ok(Preset::Constant(num(0)?))
            }
            "bump" => {
                arity(3)?;
                let width = num(1)?;
                if width <= 0.0 {
                    return Err("bump width must be positive".to_string());
                }
                Ok(Preset::Bump {
                    center: num(0)?,
                    width,
                    amplitude: num(2)?,
                })
            }
            "cosine" => {
                arity(3)?;
                let k = args[0].parse::<u32>().map_err(|_| {
                    format!("cosine mode `{}` must be a nonnegative integer", args[0])
                })?;
                Ok(Preset::Cosine {
                    k,
                    amplitude: num(1)?,
                    offset: num(2)?,
                })
            }
            other => Err(format!("unknown preset `{other}`")),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preset::Zero => write!(f, "zero"),
            Preset::Constant(c) => write!(f, "constant({c:?})"),
            Preset::Bump {
                center,
                width,
                amplitude,
            } => write!(f, "bump({center:?}, {width:?}, {amplitude:?})"),
            Preset::Cosine {
                k,
                amplitude,
                offset,
            } => write!(f, "cosine({k}, {amplitude:?}, {offset:?})"),
        }
    }
}

/// Full description of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dim: usize,
    pub length: f64,
    pub n: usize,
    pub t_final: f64,
    pub dt: f64,
    pub scheme: SchemeKind,
    pub bc: BoundaryCondition,
    pub coeffs: Coefficients,
    pub eps: f64,
    pub rhs: AdjointRhsKind,
    pub adjoint_mode: AdjointMode,
    pub initial_u: Preset,
    pub initial_v: Preset,
    pub terminal_u: Preset,
    pub terminal_v: Preset,
    pub stride: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub clamp: bool,
}

impl RunConfig {
    /// Neumann IMEX run with stride 1 and the remaining fields at their defaults.
    pub fn new(
        dim: usize,
        n: usize,
        length: f64,
        t_final: f64,
        dt: f64,
        coeffs: Coefficients,
    ) -> Self {
        RunConfig {
            dim,
            length,
            n,
            t_final,
            dt,
            scheme: SchemeKind::Imex,
            bc: BoundaryCondition::Neumann,
            coeffs,
            eps: 1.0,
            rhs: AdjointRhsKind::Identity,
            adjoint_mode: AdjointMode::Continuous,
            initial_u: Preset::Zero,
            initial_v: Preset::Zero,
            terminal_u: Preset::Constant(1.0),
            terminal_v: Preset::Constant(1.0),
            stride: 1,
            output_dir: PathBuf::from("skt-out"),
            seed: 0,
            clamp: false,
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dim, self.n, self.length)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t_final, self.dt)
    }

    pub fn initial_field(&self) -> Result<FieldPair> {
        let g = self.grid()?;
        FieldPair::new(g, self.initial_u.evaluate(&g), self.initial_v.evaluate(&g))
    }

    pub fn terminal_field(&self) -> Result<FieldPair> {
        let g = self.grid()?;
        FieldPair::new(
            g,
            self.terminal_u.evaluate(&g),
            self.terminal_v.evaluate(&g),
        )
    }

    /// Checks every numeric invariant; errors carry line 0.
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: String| Err(SktError::config(0, key, msg));
        if self.dim != 1 && self.dim != 2 {
            return fail("dim", format!("must be 1 or 2, got {}", self.dim));
        }
        if !(self.length.is_finite() && self.length > 0.0) {
            return fail("domain.length", "must be positive".into());
        }
        if self.n < 3 {
            return fail("grid.n", "must be at least 3".into());
        }
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return fail("time.t_final", "must be positive".into());
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return fail("time.dt", "must be positive".into());
        }
        if let Err(e) = self.time_grid() {
            return fail("time.dt", e.to_string());
        }
        if let Err(e) = self.coeffs.validate() {
            return fail("coeff", e.to_string());
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return fail("adjoint.eps", "must be positive".into());
        }
        if self.stride == 0 {
            return fail("output.stride", "must be at least 1".into());
        }
        let g = self
            .grid()
            .map_err(|e| SktError::config(0, "grid", e.to_string()))?;
        for (key, preset) in [("initial.u", self.initial_u), ("initial.v", self.initial_v)] {
            let values = preset.evaluate(&g);
            if values.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return fail(
                    key,
                    format!("preset {preset} is negative somewhere on the grid"),
                );
            }
        }
        for (key, preset) in [
            ("terminal.u", self.terminal_u),
            ("terminal.v", self.terminal_v),
        ] {
            if preset.evaluate(&g).iter().any(|x| !x.is_finite()) {
                return fail(key, format!("preset {preset} is not finite on the grid"));
            }
        }
        Ok(())
    }

    /// Serializes to the `key = value` format; floats use the shortest
    /// round-trip representation.
    pub fn to_config_string(&self) -> String {
        let c = &self.coeffs;
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("dim", self.dim.to_string());
        line("domain.length", format!("{:?}", self.length));
        line("grid.n", self.n.to_string());
        line("time.t_final", format!("{:?}", self.t_final));
        line("time.dt", format!("{:?}", self.dt));
        line("scheme", self.scheme.name().into());
        line("bc", self.bc.name().into());
        for (name, value) in c.named_values() {
            line(&format!("coeff.{name}"), format!("{value:?}"));
        }
        line("adjoint.eps", format!("{:?}", self.eps));
        line("adjoint.rhs", self.rhs.name().into());
        line("adjoint.mode", self.adjoint_mode.name().into());
        line("initial.u", self.initial_u.to_string());
        line("initial.v", self.initial_v.to_string());
        line("terminal.u", self.terminal_u.to_string());
        line("terminal.v", self.terminal_v.to_string());
        line("output.stride", self.stride.to_string());
        line("output.dir", self.output_dir.display().to_string());
        line("seed", self.seed.to_string());
        line("clamp", self.clamp.to_string());
        out
    }
}

const REQUIRED_KEYS: &[&str] = &[
    "dim",
    "domain.length",
    "grid.n",
    "time.t_final",
    "time.dt",
    "scheme",
    "bc",
    "coeff.a11",
    "coeff.a12",
    "coeff.a21",
    "coeff.a22",
    "coeff.b1",
    "coeff.b2",
    "coeff.c1",
    "coeff.c2",
    "coeff.a1",
    "coeff.a2",
    "coeff.d1",
    "coeff.d2",
    "initial.u",
    "initial.v",
];

const OPTIONAL_KEYS: &[&str] = &[
    "coeff.alpha",
    "adjoint.eps",
    "adjoint.rhs",
    "adjoint.mode",
    "terminal.u",
    "terminal.v",
    "output.stride",
    "output.dir",
    "seed",
    "clamp",
];

pub fn is_known_key(key: &str) -> bool {
    REQUIRED_KEYS.contains(&key) || OPTIONAL_KEYS.contains(&key)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| SktError::config(line_no, content, "expected `key = value`"))?;
        let key = key.trim();
        let value = value.trim();
        if !is_known_key(key) {
            return Err(SktError::config(line_no, key, "unknown key"));
        }
        if value.is_empty() {
            return Err(SktError::config(line_no, key, "empty value"));
        }
        if let Some((first, _)) = entries.get(key) {
            return Err(SktError::config(
                line_no,
                key,
                format!("duplicate key: defined on line {first} and again on line {line_no}"),
            ));
        }
        entries.insert(key.to_string(), (line_no, value.to_string()));
    }
    for key in REQUIRED_KEYS {
        if !entries.contains_key(*key) {
            return Err(SktError::config(0, *key, "missing required key"));
        }
    }

    let raw = |key: &str| entries.get(key).map(|(l, v)| (*l, v.as_str()));
    let float = |key: &str| -> Result<Option<f64>> {
        match raw(key) {
            None => Ok(None),
            Some((line, v)) => {
                let x: f64 = v
                    .parse()
                    .map_err(|_| SktError::config(line, key, format!("`{v}` is not a number")))?;
                if !x.is_finite() {
                    return Err(SktError::config(line, key, "value must be finite"));
                }
                Ok(Some(x))
            }
        }
    };
    let integer = |key: &str| -> Result<Option<u64>> {
        match raw(key) {
            None => Ok(None),
            Some((line, v)) => v.parse::<u64>().map(Some).map_err(|_| {
                SktError::config(line, key, format!("`{v}` is not a nonnegative integer"))
            }),
        }
    };
    let preset = |key: &str| -> Result<Option<Preset>> {
        match raw(key) {
            None => Ok(None),
            Some((line, v)) => Preset::parse(v)
                .map(Some)
                .map_err(|m| SktError::config(line, key, m)),
        }
    };
    let line_of = |key: &str| raw(key).map_or(0, |(l, _)| l);
    let req_f = |key: &str| float(key).map(|x| x.expect("required key present"));

    let coeff_value = |name: &str| -> Result<f64> {
        let key = format!("coeff.{name}");
        let value = req_f(&key)?;
        if value < 0.0 {
            return Err(SktError::config(
                line_of(&key),
                key,
                format!("{value} violates nonnegativity (all coefficients must be ≥ 0)"),
            ));
        }
        Ok(value)
    };
    let mut coeffs = Coefficients::new(
        coeff_value("a11")?,
        coeff_value("a12")?,
        coeff_value("a21")?,
        coeff_value("a22")?,
        coeff_value("b1")?,
        coeff_value("b2")?,
        coeff_value("c1")?,
        coeff_value("c2")?,
        coeff_value("a1")?,
        coeff_value("a2")?,
        coeff_value("d1")?,
        coeff_value("d2")?,
    )?;
    coeffs.alpha = match float("coeff.alpha")? {
        Some(a) if a < 0.0 => {
            return Err(SktError::config(
                line_of("coeff.alpha"),
                "coeff.alpha",
                "violates nonnegativity",
            ))
        }
        Some(a) => a,
        None if check_conditions(&coeffs).holds_coef_cond => {
            max_alpha(&coeffs, ALPHA_SAMPLE_BUDGET)?
        }
        None => 0.0,
    };

    let dim = integer("dim")?.expect("required") as usize;
    let scheme = {
        let (line, v) = raw("scheme").expect("required");
        SchemeKind::parse(v).ok_or_else(|| {
            SktError::config(line, "scheme", format!("`{v}` is not explicit|imex"))
        })?
    };
    let bc = {
        let (line, v) = raw("bc").expect("required");
        match v {
            "neumann" => BoundaryCondition::Neumann,
            "dirichlet" => BoundaryCondition::Dirichlet,
            _ => {
                return Err(SktError::config(
                    line,
                    "bc",
                    format!("`{v}` is not neumann|dirichlet"),
                ))
            }
        }
    };
    let rhs = match raw("adjoint.rhs") {
        None => AdjointRhsKind::Identity,
        Some((line, v)) => AdjointRhsKind::parse(v).ok_or_else(|| {
            SktError::config(line, "adjoint.rhs", format!("`{v}` is not identity|l"))
        })?,
    };
    let adjoint_mode = match raw("adjoint.mode") {
        None => AdjointMode::Continuous,
        Some((line, v)) => AdjointMode::parse(v).ok_or_else(|| {
            SktError::config(
                line,
                "adjoint.mode",
                format!("`{v}` is not continuous|transpose"),
            )
        })?,
    };
    let clamp = match raw("clamp") {
        None => false,
        Some((_, "true")) => true,
        Some((_, "false")) => false,
        Some((line, v)) => {
            return Err(SktError::config(
                line,
                "clamp",
                format!("`{v}` is not true|false"),
            ))
        }
    };

    let cfg = RunConfig {
        dim,
        length: req_f("domain.length")?,
        n: integer("grid.n")?.expect("required") as usize,
        t_final: req_f("time.t_final")?,
        dt: req_f("time.dt")?,
        scheme,
        bc,
        coeffs,
        eps: float("adjoint.eps")?.unwrap_or(1.0),
        rhs,
        adjoint_mode,
        initial_u: preset("initial.u")?.expect("required"),
        initial_v: preset("initial.v")?.expect("required"),
        terminal_u: preset("terminal.u")?.unwrap_or(Preset::Constant(1.0)),
        terminal_v: preset("terminal.v")?.unwrap_or(Preset::Constant(1.0)),
        stride: integer("output.stride")?.unwrap_or(1) as usize,
        output_dir: raw("output.dir")
            .map_or_else(|| PathBuf::from("skt-out"), |(_, v)| PathBuf::from(v)),
        seed: integer("seed")?.unwrap_or(0),
        clamp,
    };
    cfg.validate().map_err(|e| match e {
        SktError::Config { key, message, .. } => {
            let line = line_of(&key);
            SktError::Config { line, key, message }
        }
        other => other,
    })?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = "\
dim = 1
domain.length = 1.0
grid.n = 32
time.t_final = 0.1
time.dt = 0.001
scheme = imex
bc = neumann
coeff.a11 = 1
coeff.a12 = 1
coeff.a21 = 1
coeff.a22 = 1
coeff.b1 = 1
coeff.b2 = 1
coeff.c1 = 1
coeff.c2 = 1
coeff.a1 = 1
coeff.a2 = 1
coeff.d1 = 1
coeff.d2 = 1
initial.u = bump(0.5, 0.1, 2.0)
initial.v = cosine(1, 0.5, 1.0)
";

    #[test]
    fn minimal_file_parses() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        let mut expected = RunConfig::new(1, 32, 1.0, 0.1, 0.001, Coefficients::unit());
        expected.coeffs.alpha = max_alpha(&Coefficients::unit(), ALPHA_SAMPLE_BUDGET).unwrap();
        expected.initial_u = Preset::Bump {
            center: 0.5,
            width: 0.1,
            amplitude: 2.0,
        };
        expected.initial_v = Preset::Cosine {
            k: 1,
            amplitude: 0.5,
            offset: 1.0,
        };
        assert_eq!(cfg, expected);
        assert_eq!(cfg.coeffs.d0(), 1.0);
    }

    #[test]
    fn negative_coefficient_names_the_invariant() {
        let text = MINIMAL.replace("coeff.a12 = 1", "coeff.a12 = -1");
        match parse_config_str(&text).unwrap_err() {
            SktError::Config { line, key, message } => {
                assert_eq!(line, 9);
                assert_eq!(key, "coeff.a12");
                assert!(message.contains("nonnegativity"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_key_cites_both_lines() {
        let text = format!("{MINIMAL}grid.n = 64\n");
        match parse_config_str(&text).unwrap_err() {
            SktError::Config { line, key, message } => {
                assert_eq!(key, "grid.n");
                assert_eq!(line, 22);
                assert!(
                    message.contains("line 3") && message.contains("line 22"),
                    "{message}"
                );
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_and_missing_keys() {
        let text = format!("{MINIMAL}grid.m = 3\n");
        assert!(
            matches!(parse_config_str(&text), Err(SktError::Config { key, .. }) if key == "grid.m")
        );
        let text = MINIMAL.replace("bc = neumann\n", "");
        assert!(
            matches!(parse_config_str(&text), Err(SktError::Config { key, .. }) if key == "bc")
        );
    }

    #[test]
    fn invariant_violations() {
        let text = MINIMAL.replace("time.dt = 0.001", "time.dt = 0.03");
        assert!(
            matches!(parse_config_str(&text), Err(SktError::Config { key, .. }) if key == "time.dt")
        );
        let text = MINIMAL.replace("cosine(1, 0.5, 1.0)", "cosine(1, 2.0, 1.0)");
        assert!(
            matches!(parse_config_str(&text), Err(SktError::Config { key, .. }) if key == "initial.v")
        );
        let text = MINIMAL.replace("grid.n = 32", "grid.n = 2");
        assert!(
            matches!(parse_config_str(&text), Err(SktError::Config { key, .. }) if key == "grid.n")
        );
        let text = MINIMAL.replace("scheme = imex", "scheme = rk4");
        assert!(matches!(
            parse_config_str(&text),
            Err(SktError::Config { line: 6, .. })
        ));
    }

    #[test]
    fn serialization_round_trips() {
        let mut cfg = parse_config_str(MINIMAL).unwrap();
        cfg.clamp = true;
        cfg.stride = 5;
        cfg.terminal_v = Preset::Zero;
        let back = parse_config_str(&cfg.to_config_string()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn preset_grammar() {
        assert_eq!(Preset::parse("zero").unwrap(), Preset::Zero);
        assert_eq!(
            Preset::parse("constant(2.5)").unwrap(),
            Preset::Constant(2.5)
        );
        assert!(Preset::parse("bump(0.5, 0, 1)").is_err());
        assert!(Preset::parse("cosine(1.5, 1, 1)").is_err());
        assert!(Preset::parse("wave(1)").is_err());
        let g = Grid::new(1, 4, 1.0).unwrap();
        let v = Preset::Cosine {
            k: 0,
            amplitude: 1.0,
            offset: 1.0,
        }
        .evaluate(&g);
        assert_eq!(v, vec![2.0; 4]);
    }
}

//! TOML system files: a chart, named functions, systems, group actions,
//! raw maps and named experiment configurations.
//!
//! Every error carries a 1-based line and column in the source document.
//! See `docs/system-file.md` for the grammar.

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Spanned;

use crate::expr::{parse_expr, Expr};
use crate::lift::{ActionSpec, GroupAction, GroupKind};
use crate::rigidity::ConjugatedAction;
use crate::smooth_map::ClosedMap;
use crate::symplectic::{DarbouxChart, MomentMapSystem, Orientation};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{column}: {message}")]
pub struct SystemFileError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

/// Commands an experiment block can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Analyze,
    Lift,
    Conjugate,
    Flow,
    Reduce,
    RigidityExperiment,
    Leaf,
}

impl Command {
    pub const ALL: [(&'static str, Command); 7] = [
        ("analyze", Command::Analyze),
        ("lift", Command::Lift),
        ("conjugate", Command::Conjugate),
        ("flow", Command::Flow),
        ("reduce", Command::Reduce),
        ("rigidity-experiment", Command::RigidityExperiment),
        ("leaf", Command::Leaf),
    ];

    pub fn name(self) -> &'static str {
        Command::ALL.iter().find(|(_, c)| *c == self).map(|(n, _)| *n).unwrap_or("?")
    }
}

/// Settings of one experiment block; every field is optional and command
/// line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub system: Option<String>,
    pub perturbed: Option<String>,
    pub function: Option<String>,
    pub action: Option<String>,
    pub action1: Option<String>,
    pub action2: Option<String>,
    pub raw_map: Option<String>,
    pub point: Option<Vec<f64>>,
    pub level: Option<Vec<f64>>,
    pub x0: Option<Vec<f64>>,
    pub dt: Option<f64>,
    pub steps: Option<usize>,
    pub quad_n: Option<usize>,
    pub grid: Option<usize>,
    pub domain: Option<Vec<[f64; 2]>>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub name: String,
    pub command: Command,
    pub settings: Settings,
}

#[derive(Debug, Clone)]
pub struct SystemFile {
    pub chart: Option<DarbouxChart>,
    /// In document order.
    pub functions: Vec<(String, Expr)>,
    pub systems: Vec<(String, Vec<String>)>,
    pub actions: Vec<(String, ActionEntry)>,
    pub maps: Vec<(String, Vec<Expr>)>,
    pub experiments: Vec<Experiment>,
}

impl SystemFile {
    pub fn function(&self, name: &str) -> Option<&Expr> {
        self.functions.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    /// A symbolic action; conjugated actions have no closed form and are
    /// not returned.
    pub fn action(&self, name: &str) -> Option<&ActionSpec> {
        match self.entry(name)? {
            ActionEntry::Spec(a) => Some(a),
            ActionEntry::Conjugated { .. } => None,
        }
    }

    pub fn entry(&self, name: &str) -> Option<&ActionEntry> {
        self.actions.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn map(&self, name: &str) -> Option<&[Expr]> {
        self.maps.iter().find(|(n, _)| n == name).map(|(_, m)| m.as_slice())
    }

    /// Names of the systems, or `["default"]` when the file lists the
    /// functions only.
    pub fn system_names(&self) -> Vec<String> {
        if self.systems.is_empty() && !self.functions.is_empty() {
            vec!["default".into()]
        } else {
            self.systems.iter().map(|(n, _)| n.clone()).collect()
        }
    }

    /// A named system; `None` selects the only one, or all functions in
    /// document order when no systems are declared.
    pub fn system(&self, name: Option<&str>) -> Result<MomentMapSystem, String> {
        let chart = self.chart.clone().ok_or("the file has no [chart] block")?;
        let names: Vec<String> = match name {
            Some(n) if n != "default" || !self.systems.is_empty() => self
                .systems
                .iter()
                .find(|(s, _)| s == n)
                .map(|(_, fs)| fs.clone())
                .ok_or_else(|| format!("no system named `{n}`"))?,
            None if self.systems.len() > 1 => {
                return Err("several systems are declared; choose one with --system".into());
            }
            None if self.systems.len() == 1 => self.systems[0].1.clone(),
            _ => self.functions.iter().map(|(n, _)| n.clone()).collect(),
        };
        let comps = names
            .iter()
            .map(|n| self.function(n).cloned().ok_or_else(|| format!("no function named `{n}`")))
            .collect::<Result<Vec<_>, _>>()?;
        MomentMapSystem::new(chart, comps).map_err(|e| e.to_string())
    }
}

/// An `[actions.X]` block: either explicit formulas, or `h . rho . h^-1`
/// for an explicit action `rho` and a base map `h`.
#[derive(Debug, Clone)]
pub enum ActionEntry {
    Spec(ActionSpec),
    Conjugated { of: String, map: Vec<Expr>, action: Arc<ConjugatedAction> },
}

impl ActionEntry {
    pub fn as_action(&self) -> &dyn GroupAction {
        match self {
            ActionEntry::Spec(a) => a,
            ActionEntry::Conjugated { action, .. } => action.as_ref(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    chart: Option<Spanned<RawChart>>,
    functions: Option<Spanned<BTreeMap<String, Spanned<String>>>>,
    #[serde(default)]
    systems: BTreeMap<String, Spanned<Vec<Spanned<String>>>>,
    #[serde(default)]
    actions: BTreeMap<String, Spanned<RawAction>>,
    #[serde(default)]
    maps: BTreeMap<String, Spanned<Vec<Spanned<String>>>>,
    #[serde(default)]
    experiments: BTreeMap<String, Spanned<RawExperiment>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChart {
    n: Option<usize>,
    positions: Option<Vec<String>>,
    momenta: Option<Vec<String>>,
    periodic: Option<Vec<bool>>,
    orientation: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAction {
    group: Option<Spanned<String>>,
    params: Option<Vec<String>>,
    base: Option<Vec<String>>,
    periodic: Option<Vec<bool>>,
    components: Option<Vec<Spanned<String>>>,
    conjugate_of: Option<Spanned<String>>,
    map: Option<Vec<Spanned<String>>>,
}

#[derive(Deserialize)]
struct RawExperiment {
    command: Spanned<String>,
    // checked against `Settings` afterwards; deny_unknown_fields does not
    // apply through a flatten
    #[serde(flatten)]
    settings: toml::Table,
}

struct Doc<'a> {
    src: &'a str,
}

impl Doc<'_> {
    fn position(&self, offset: usize) -> (usize, usize) {
        let offset = offset.min(self.src.len());
        let before = &self.src[..offset];
        let line = before.matches('\n').count() + 1;
        let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        (line, column)
    }

    fn error(&self, span: Range<usize>, message: impl Into<String>) -> SystemFileError {
        let (line, column) = self.position(span.start);
        SystemFileError { line, column, message: message.into() }
    }

    /// Parse an expression held in a TOML string, reporting errors at their
    /// position in the document.
    fn expr(&self, s: &Spanned<String>) -> Result<Expr, SystemFileError> {
        parse_expr(s.get_ref()).map_err(|e| {
            let raw = &self.src[s.span().start.min(self.src.len())..];
            let mut skip = if raw.starts_with("\"\"\"") || raw.starts_with("'''") { 3 } else { 1 };
            if skip == 3 && raw[3..].starts_with('\n') {
                skip += 1;
            } else if skip == 3 && raw[3..].starts_with("\r\n") {
                skip += 2;
            }
            let (line, column) = self.position(s.span().start + skip);
            let e = e.offset_by(line, column);
            SystemFileError { line: e.line, column: e.column, message: e.message }
        })
    }
}

fn parse_group(text: &str) -> Result<GroupKind, String> {
    let parts: Vec<GroupKind> = text
        .split('*')
        .map(|p| {
            let p = p.trim();
            let (name, dim) = match p.split_once('(') {
                Some((name, rest)) => {
                    let d = rest
                        .strip_suffix(')')
                        .and_then(|d| d.trim().parse::<usize>().ok())
                        .filter(|&d| d > 0)
                        .ok_or_else(|| format!("bad dimension in `{p}`"))?;
                    (name.trim(), Some(d))
                }
                None => (p, None),
            };
            match (name, dim) {
                ("circle", None) => Ok(GroupKind::Circle),
                ("torus", Some(d)) => Ok(GroupKind::Torus(d)),
                ("real_line", d) => Ok(GroupKind::RealLine(d.unwrap_or(1))),
                _ => Err(format!("unknown group `{p}`; expected circle, torus(d), real_line(d) or a product with `*`")),
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(match <[GroupKind; 1]>::try_from(parts) {
        Ok([one]) => one,
        Err(parts) => GroupKind::Product(parts),
    })
}

fn build_chart(doc: &Doc, raw: &Spanned<RawChart>) -> Result<DarbouxChart, SystemFileError> {
    let err = |m: String| doc.error(raw.span(), m);
    let c = raw.get_ref();
    let n = match (c.n, &c.positions) {
        (Some(n), Some(p)) if p.len() != n => return Err(err(format!("n = {n} but {} positions are listed", p.len()))),
        (Some(0), _) => return Err(err("n must be positive".into())),
        (Some(n), _) => n,
        (None, Some(p)) => p.len(),
        (None, None) => return Err(err("the chart needs `n` or `positions`".into())),
    };
    let standard = DarbouxChart::standard(n);
    let positions = c.positions.clone().unwrap_or_else(|| standard.positions().to_vec());
    let momenta = c.momenta.clone().unwrap_or_else(|| match &c.positions {
        Some(p) => p.iter().map(|q| crate::lift::default_momentum_name(q)).collect(),
        None => standard.momenta().to_vec(),
    });
    let mut chart = DarbouxChart::new(positions, momenta).map_err(|e| err(e.to_string()))?;
    if let Some(p) = &c.periodic {
        chart = chart.with_periodic(p.clone()).map_err(|e| err(format!("periodic flags: {e}")))?;
    }
    match c.orientation.as_deref() {
        None | Some("standard") => {}
        Some("cotangent") => chart = chart.with_orientation(Orientation::Cotangent),
        Some(o) => return Err(err(format!("unknown orientation `{o}`; expected standard or cotangent"))),
    }
    Ok(chart)
}

/// Parse and validate a system file.
pub fn parse_system_file(src: &str) -> Result<SystemFile, SystemFileError> {
    let doc = Doc { src };
    let raw: RawFile = toml::from_str(src).map_err(|e| {
        let span = e.span().unwrap_or(0..0);
        doc.error(span, e.message().trim_end().to_string())
    })?;

    let chart = raw.chart.as_ref().map(|c| build_chart(&doc, c)).transpose()?;

    let mut functions = Vec::new();
    if let Some(block) = &raw.functions {
        if block.get_ref().is_empty() {
            return Err(doc.error(block.span(), "the [functions] block is empty"));
        }
        let Some(chart) = &chart else {
            return Err(doc.error(block.span(), "functions need a [chart] block"));
        };
        let mut entries: Vec<(&String, &Spanned<String>)> = block.get_ref().iter().collect();
        entries.sort_by_key(|(_, s)| s.span().start);
        for (name, text) in entries {
            let e = doc.expr(text)?;
            chart.check_expr(&e).map_err(|err| doc.error(text.span(), format!("function `{name}`: {err}")))?;
            functions.push((name.clone(), e));
        }
    }

    let mut systems = Vec::new();
    for (name, list) in &raw.systems {
        if list.get_ref().is_empty() {
            return Err(doc.error(list.span(), format!("system `{name}` lists no functions")));
        }
        let mut names = Vec::new();
        for f in list.get_ref() {
            if !functions.iter().any(|(n, _)| n == f.get_ref()) {
                return Err(doc.error(f.span(), format!("system `{name}` refers to unknown function `{}`", f.get_ref())));
            }
            names.push(f.get_ref().clone());
        }
        if let Some(chart) = &chart {
            if names.len() != chart.dof() {
                return Err(doc.error(
                    list.span(),
                    format!("system `{name}` has {} functions but the chart has {} degrees of freedom", names.len(), chart.dof()),
                ));
            }
        }
        systems.push((name.clone(), names));
    }

    let mut actions = Vec::new();
    for (name, spec) in &raw.actions {
        let a = spec.get_ref();
        if a.conjugate_of.is_some() {
            continue;
        }
        let missing = |what: &str| doc.error(spec.span(), format!("action `{name}` needs `{what}` (or `conjugate_of` and `map`)"));
        let group_text = a.group.as_ref().ok_or_else(|| missing("group"))?;
        let group = parse_group(group_text.get_ref()).map_err(|m| doc.error(group_text.span(), m))?;
        let params = a.params.clone().ok_or_else(|| missing("params"))?;
        let base = a.base.clone().ok_or_else(|| missing("base"))?;
        let comps = a.components.as_ref().ok_or_else(|| missing("components"))?;
        let comps = comps.iter().map(|c| doc.expr(c)).collect::<Result<Vec<_>, _>>()?;
        if a.map.is_some() {
            return Err(doc.error(spec.span(), format!("action `{name}`: `map` needs `conjugate_of`")));
        }
        let periodic = a.periodic.clone().unwrap_or_else(|| vec![false; base.len()]);
        let spec_built = ActionSpec::new(group, params, base, periodic, comps)
            .map_err(|e| doc.error(spec.span(), format!("action `{name}`: {e}")))?;
        actions.push((name.clone(), ActionEntry::Spec(spec_built)));
    }
    for (name, spec) in &raw.actions {
        let a = spec.get_ref();
        let Some(of) = &a.conjugate_of else { continue };
        if a.group.is_some() || a.params.is_some() || a.base.is_some() || a.periodic.is_some() || a.components.is_some() {
            return Err(doc.error(
                spec.span(),
                format!("action `{name}`: a conjugated action takes only `conjugate_of` and `map`"),
            ));
        }
        let source = actions.iter().find_map(|(n, e)| match e {
            ActionEntry::Spec(s) if n == of.get_ref() => Some(s.clone()),
            _ => None,
        });
        let source = source.ok_or_else(|| {
            doc.error(of.span(), format!("action `{name}`: `{}` is not an action with explicit formulas", of.get_ref()))
        })?;
        let map_text = a.map.as_ref().ok_or_else(|| doc.error(spec.span(), format!("action `{name}` needs `map`")))?;
        let map = map_text.iter().map(|c| doc.expr(c)).collect::<Result<Vec<_>, _>>()?;
        for (text, e) in map_text.iter().zip(&map) {
            if let Some(v) = e.variables().into_iter().find(|v| !source.base().contains(v)) {
                return Err(doc.error(text.span(), format!("action `{name}`: `{v}` is not a base coordinate of `{}`", of.get_ref())));
            }
        }
        let closed = ClosedMap::new(source.base().to_vec(), map.clone())
            .map_err(|e| doc.error(spec.span(), format!("action `{name}`: {e}")))?;
        let action = ConjugatedAction::new(Arc::new(source), Arc::new(closed))
            .map_err(|e| doc.error(spec.span(), format!("action `{name}`: {e}")))?;
        actions.push((name.clone(), ActionEntry::Conjugated { of: of.get_ref().clone(), map, action: Arc::new(action) }));
    }

    let mut maps = Vec::new();
    for (name, list) in &raw.maps {
        let exprs = list.get_ref().iter().map(|c| doc.expr(c)).collect::<Result<Vec<_>, _>>()?;
        maps.push((name.clone(), exprs));
    }

    let mut experiments = Vec::new();
    for (name, block) in &raw.experiments {
        let x = block.get_ref();
        let command = Command::ALL
            .iter()
            .find(|(n, _)| n == x.command.get_ref())
            .map(|(_, c)| *c)
            .ok_or_else(|| {
                let known: Vec<&str> = Command::ALL.iter().map(|(n, _)| *n).collect();
                doc.error(x.command.span(), format!("unknown command `{}`; expected one of {}", x.command.get_ref(), known.join(", ")))
            })?;
        let s: Settings = toml::Value::Table(x.settings.clone())
            .try_into()
            .map_err(|e: toml::de::Error| doc.error(block.span(), format!("experiment `{name}`: {}", e.message())))?;
        let unresolved = |what: &str, v: &Option<String>, known: &dyn Fn(&str) -> bool| -> Result<(), SystemFileError> {
            match v {
                Some(n) if !known(n) => Err(doc.error(block.span(), format!("experiment `{name}`: unknown {what} `{n}`"))),
                _ => Ok(()),
            }
        };
        let has_system =
            |n: &str| systems.iter().any(|(s, _)| s == n) || (n == "default" && systems.is_empty() && !functions.is_empty());
        unresolved("system", &s.system, &has_system)?;
        unresolved("system", &s.perturbed, &has_system)?;
        unresolved("function", &s.function, &|n| functions.iter().any(|(f, _)| f == n))?;
        for a in [&s.action, &s.action1, &s.action2] {
            unresolved("action", a, &|n| actions.iter().any(|(f, _)| f == n))?;
        }
        unresolved("map", &s.raw_map, &|n| maps.iter().any(|(f, _)| f == n))?;
        experiments.push(Experiment { name: name.clone(), command, settings: s });
    }

    Ok(SystemFile { chart, functions, systems, actions, maps, experiments })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRIPLE: &str = r#"
[chart]
n = 2

[functions]
f1 = "x1^2 + y1^2"
f2 = "x2^2 + y2^2"
g1 = "(x1^2 + y1^2)^2"

[systems]
F = ["f1", "f2"]
G = ["g1", "f2"]

[actions.rot]
group = "circle"
params = ["th"]
base = ["q"]
periodic = [true]
components = ["q + th"]

[experiments.g]
command = "rigidity-experiment"
system = "G"
"#;

    #[test]
    fn parses_a_full_file() {
        let f = parse_system_file(TRIPLE).unwrap();
        assert_eq!(f.chart.as_ref().unwrap().names(), vec!["x1", "x2", "y1", "y2"]);
        let names: Vec<&str> = f.functions.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, vec!["f1", "f2", "g1"]);
        assert_eq!(f.system(Some("G")).unwrap().components()[0].to_string(), "(x1^2 + y1^2)^2");
        assert!(f.system(None).is_err());
        assert_eq!(f.action("rot").unwrap().params(), ["th".to_string()]);
        assert_eq!(f.experiments[0].command, Command::RigidityExperiment);
        assert_eq!(f.experiments[0].settings.system.as_deref(), Some("G"));
    }

    #[test]
    fn groups() {
        assert_eq!(parse_group("circle").unwrap(), GroupKind::Circle);
        assert_eq!(parse_group("torus(3)").unwrap(), GroupKind::Torus(3));
        assert_eq!(
            parse_group("circle * real_line(1)").unwrap(),
            GroupKind::Product(vec![GroupKind::Circle, GroupKind::RealLine(1)])
        );
        assert!(parse_group("sphere").is_err());
        assert!(parse_group("torus(0)").is_err());
    }

    fn err(src: &str) -> SystemFileError {
        parse_system_file(src).unwrap_err()
    }

    #[test]
    fn errors_are_located() {
        let e = err("[chart]\nn = 1\n\n[functions]\nf = \"x^2 + * y\"\n");
        assert_eq!((e.line, e.column), (5, 12), "{e}");

        let e = err("[chart]\nn = 1\n[functions]\n");
        assert_eq!(e.line, 3);
        assert!(e.message.contains("empty"));

        let e = err("[chart]\nn = 1\n[functions]\nf = \"x + z\"\n");
        assert_eq!(e.line, 4);
        assert!(e.message.contains('z'), "{e}");

        let e = err("[chart]\nn = 2\n[functions]\nf = \"x1\"\n[systems]\nS = [\"f\", \"h\"]\n");
        assert_eq!((e.line, e.column), (6, 11), "{e}");

        let e = err("[chart]\nn = 1\nbogus = 3\n");
        assert!(e.message.contains("bogus"), "{e}");

        let e = err("[experiments.a]\ncommand = \"fly\"\n");
        assert_eq!((e.line, e.column), (2, 11));

        let e = err("[experiments.a]\ncommand = \"flow\"\nsystem = \"nope\"\n");
        assert!(e.message.contains("nope"));

        let e = err("x = [");
        assert_eq!(e.line, 1);
    }

    #[test]
    fn multiline_expressions_are_located() {
        let e = err("[chart]\nn = 1\n[functions]\nf = \"\"\"\nx^2 +\n  (y\"\"\"\n");
        assert_eq!(e.line, 6, "{e}");
    }
}

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use thiserror::Error;

use symplift::expr::Program;
use symplift::flows::{
    action_variable_1dof, conserved_along_flow, degenerate_rigidity_experiment, radial_profile, s1_reduce,
    symplectic_integrate, ActionConfig, EvidenceCheck, ExperimentConfig, FlowError, ProfileConfig, ReduceConfig, Verdict,
};
use symplift::lift::{
    check_action_axioms, cotangent_lift, verify_functoriality, verify_lift_invariance, verify_moment_closure,
    verify_moment_invariance, GroupAction, LiftError, LiftedAction,
};
use symplift::rigidity::{
    conjugate, convergence_study, elliptic_leaf_rigidity_experiment, AverageConfig, GroupQuadrature, LeafConfig,
    RigidityError, SuiteConfig,
};
use symplift::sampling::{sample_bounds, seeded};
use symplift::singularity::{classify_point, scan_singular_points, SingularityConfig, SingularityError};
use symplift::symplectic::{check_involution, SymplecticError};
use symplift::system_file::{ActionEntry, Command, Settings, SystemFile};
use symplift::MomentMapSystem;

use crate::plot::{line_chart, write_csv, Series};
use crate::report::{Check, Outcome, Report};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Lift(#[from] LiftError),
    #[error(transparent)]
    Rigidity(#[from] RigidityError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Singularity(#[from] SingularityError),
    #[error(transparent)]
    Symplectic(#[from] SymplecticError),
    #[error(transparent)]
    Expr(#[from] symplift::ExprError),
}

#[derive(Debug, Clone, Default)]
pub struct Outputs {
    pub csv: Option<PathBuf>,
    pub svg: Option<PathBuf>,
}

fn usage(m: impl Into<String>) -> CliError {
    CliError::Usage(m.into())
}

fn save(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn save_csv(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<(), CliError> {
    write_csv(path, header, rows).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn system(f: &SystemFile, name: Option<&str>) -> Result<MomentMapSystem, CliError> {
    f.system(name).map_err(CliError::Usage)
}

fn bounds(s: &Settings, dim: usize, default: impl Fn(usize) -> (f64, f64)) -> Result<Vec<(f64, f64)>, CliError> {
    match &s.domain {
        Some(d) if d.len() != dim => Err(usage(format!("--domain has {} intervals, expected {dim}", d.len()))),
        Some(d) => Ok(d.iter().map(|[a, b]| (*a, *b)).collect()),
        None => Ok((0..dim).map(default).collect()),
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

pub fn execute(cmd: Command, f: &SystemFile, path: &str, s: &Settings, out: &Outputs) -> Result<Report, CliError> {
    match cmd {
        Command::Analyze => analyze(f, path, s, out),
        Command::Lift => lift(f, path, s),
        Command::Conjugate => conjugate_cmd(f, path, s, out),
        Command::Flow => flow(f, path, s, out),
        Command::Reduce => reduce(f, path, s),
        Command::RigidityExperiment => rigidity_experiment(f, path, s),
        Command::Leaf => leaf(f, path, s),
    }
}

fn analyze(f: &SystemFile, path: &str, s: &Settings, out: &Outputs) -> Result<Report, CliError> {
    let names = match &s.system {
        Some(n) => vec![n.clone()],
        None => f.system_names(),
    };
    if names.is_empty() {
        return Err(usage("the file declares no functions"));
    }
    let tol = s.tol.unwrap_or(1e-9);
    let seed = s.seed.unwrap_or(7);
    let grid = s.grid.unwrap_or(5);
    let samples = s.samples.unwrap_or(200);
    let cfg = SingularityConfig { seed, ..SingularityConfig::default() };
    let mut report = Report::new(
        "analyze",
        path,
        json!({ "settings": s, "tol": tol, "seed": seed, "grid": grid, "samples": samples, "singularity": cfg }),
    );
    let mut results = Vec::new();
    let mut rows = Vec::new();
    let mut dim = 0;
    for (idx, name) in names.iter().enumerate() {
        let sys = system(f, Some(name))?;
        dim = sys.chart().dim();
        let b = bounds(s, dim, |_| (-1.0, 1.0))?;
        let pts = sample_bounds(&mut seeded(seed), &b, samples);
        let inv = check_involution(&sys, &pts, tol)?;
        report.checks.push(Check::at_most(format!("{name}: involution"), inv.residual.max_residual, tol));
        let points = match &s.point {
            Some(p) => match classify_point(&sys, p, &cfg)? {
                Some(r) => vec![r],
                None => Vec::new(),
            },
            None => scan_singular_points(&sys, &b, grid, 16, &cfg)?.points,
        };
        for p in &points {
            let kind = match p.williamson {
                Some(w) => format!("{} (k_e, k_h, k_f) = ({}, {}, {})", p.verdict, w.elliptic, w.hyperbolic, w.focus_focus),
                None => p.verdict.clone(),
            };
            report.checks.push(Check::flag(
                format!("{name}: classification at {:?}", p.point),
                true,
                format!("rank {}, {kind}", p.rank),
            ));
            let (ke, kh, kf) = p.williamson.map_or((f64::NAN, f64::NAN, f64::NAN), |w| {
                (w.elliptic as f64, w.hyperbolic as f64, w.focus_focus as f64)
            });
            let mut row = vec![idx as f64];
            row.extend(&p.point);
            row.extend([p.rank as f64, if p.degenerate { 0.0 } else { 1.0 }, ke, kh, kf]);
            rows.push(row);
        }
        let summary: Vec<Value> = points
            .iter()
            .map(|p| {
                json!({
                    "point": p.point,
                    "rank": p.rank,
                    "verdict": p.verdict,
                    "williamson": p.williamson.map(|w| [w.elliptic, w.hyperbolic, w.focus_focus]),
                })
            })
            .collect();
        results.push(json!({
            "system": name,
            "components": sys.components().iter().map(|c| c.to_string()).collect::<Vec<_>>(),
            "involution": inv,
            "singular_points": summary,
            "reports": points,
        }));
    }
    if let Some(p) = &out.csv {
        let mut header = vec!["system".to_string()];
        header.extend((0..dim).map(|i| format!("z{i}")));
        header.extend(["rank", "nondegenerate", "k_e", "k_h", "k_f"].map(String::from));
        save_csv(p, &header, &rows)?;
    }
    report.result = json!({ "systems": results });
    Ok(report.settle())
}

fn lift(f: &SystemFile, path: &str, s: &Settings) -> Result<Report, CliError> {
    let name = match &s.action {
        Some(a) => a.clone(),
        None if f.actions.len() == 1 => f.actions[0].0.clone(),
        None => return Err(usage("choose an action with --action")),
    };
    let spec = match f.entry(&name) {
        Some(ActionEntry::Spec(a)) => a,
        Some(ActionEntry::Conjugated { .. }) => {
            return Err(usage(format!("`{name}` is a conjugated action without closed-form formulas; lift needs explicit components")));
        }
        None => return Err(usage(format!("no action named `{name}`"))),
    };
    let tol = s.tol.unwrap_or(1e-9);
    let seed = s.seed.unwrap_or(3);
    let points_n = s.samples.unwrap_or(64);
    let built = cotangent_lift(spec)?;
    let lifted = match &s.raw_map {
        Some(m) => {
            let comps = f.map(m).ok_or_else(|| usage(format!("no map named `{m}`")))?.to_vec();
            LiftedAction::from_raw(spec, built.chart().clone(), comps)?
        }
        None => built,
    };
    let m = spec.base().len();
    let mut rng = seeded(seed);
    let params = spec.group().sample(&mut rng, 32);
    let b = bounds(s, 2 * m, |_| (-1.0, 1.0))?;
    let points = sample_bounds(&mut rng, &b, points_n);
    let base: Vec<Vec<f64>> = points.iter().map(|z| z[..m].to_vec()).collect();
    let mut report = Report::new(
        "lift",
        path,
        json!({ "settings": s, "action": name, "tol": tol, "seed": seed, "params": params.len(), "points": points.len() }),
    );
    let axioms = check_action_axioms(spec, &params, &base, 1e-10, 1e-9)?;
    let inv = verify_lift_invariance(&lifted, &params, &points, tol)?;
    let closure = verify_moment_closure(&lifted, &points, tol)?;
    let moment_inv = verify_moment_invariance(&lifted, &params, &points, tol)?;
    let functor = verify_functoriality(&lifted, &params, &points, tol)?;
    for r in [&axioms.identity, &axioms.composition, &inv.pullback, &inv.symplecticity, &closure, &moment_inv, &functor] {
        report.checks.push(Check::at_most(r.check.clone(), r.max_residual, r.tol));
    }
    report.result = json!({
        "action": name,
        "raw_map": s.raw_map,
        "chart": lifted.chart().names(),
        "lifted": lifted.components().map(|c| c.iter().map(|e| e.to_string()).collect::<Vec<_>>()),
        "moment_map": lifted.moment_map().iter().map(|e| e.to_string()).collect::<Vec<_>>(),
        "axioms": axioms,
        "invariance": inv,
        "moment_closure": closure,
        "moment_invariance": moment_inv,
        "functoriality": functor,
    });
    Ok(report.settle())
}

fn conjugate_cmd(f: &SystemFile, path: &str, s: &Settings, out: &Outputs) -> Result<Report, CliError> {
    let get = |n: &Option<String>, flag: &str| -> Result<_, CliError> {
        let n = n.as_ref().ok_or_else(|| usage(format!("{flag} is required")))?;
        f.entry(n).map(|e| e.as_action()).ok_or_else(|| usage(format!("no action named `{n}`")))
    };
    let rho1 = get(&s.action1, "--action1")?;
    let rho2 = get(&s.action2, "--action2")?;
    let n = s.quad_n.unwrap_or(1024);
    let seed = s.seed.unwrap_or(5);
    let suite = SuiteConfig {
        samples: s.samples.unwrap_or(1000),
        seed,
        tol_conj: s.tol.unwrap_or(1e-6),
        ..SuiteConfig::default()
    };
    let mut avg = AverageConfig { seed: seed.wrapping_add(6), ..AverageConfig::default() };
    if let Some(g) = s.grid {
        avg.box_points = g;
    }
    let periodic = rho1.periodic().to_vec();
    let domain = bounds(s, periodic.len(), |i| if periodic[i] { (0.0, 2.0 * PI) } else { (-1.0, 1.0) })?;
    let mut report = Report::new(
        "conjugate",
        path,
        json!({ "settings": s, "quad_n": n, "domain": domain, "average": avg, "suite": suite }),
    );
    let refused = |e: &RigidityError| {
        matches!(
            e,
            RigidityError::NotClose { .. }
                | RigidityError::CloudTooSpread { .. }
                | RigidityError::NonCompactGroup(_)
                | RigidityError::Mismatch(_)
                | RigidityError::NonInvertible { .. }
        )
    };
    let result = GroupQuadrature::uniform(rho1.group(), n).and_then(|q| conjugate(rho1, rho2, &q, &domain, &avg, &suite));
    let res = match result {
        Ok(r) => r,
        Err(e) if refused(&e) => return Ok(report.refuse(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    report.checks.push(Check::at_most("node_equivariance", res.node_equivariance, 1e-12));
    report.checks.push(Check {
        name: "min_det".into(),
        value: Some(res.min_det),
        tol: Some(res.det_threshold),
        pass: res.min_det >= res.det_threshold,
        detail: Some("Jacobian determinant of the averaged map is at least the threshold".into()),
    });
    if let Some(e) = &res.suite {
        report.checks.push(Check::at_most("residual_conj", e.residual_conj, e.tol_conj));
        report.checks.push(Check::at_most("residual_conj_lifted", e.residual_conj_lifted, e.lift_constant * e.tol_conj));
        report.checks.push(Check::at_most("residual_sympl", e.residual_sympl, e.tol_sympl));
        report.checks.push(Check::at_most("residual_moment", e.residual_moment, e.tol_moment));
    }
    if out.csv.is_some() || out.svg.is_some() {
        let mut per_axis: Vec<usize> = [n / 8, n / 4, n / 2, n].into_iter().filter(|&k| k >= 2).collect();
        per_axis.dedup();
        let curve = convergence_study(rho1, rho2, &per_axis, &domain, &avg, &suite)?;
        let rows: Vec<Vec<f64>> = curve
            .iter()
            .map(|c| vec![c.nodes as f64, c.residual_conj, c.residual_moment, c.node_equivariance])
            .collect();
        if let Some(p) = &out.csv {
            let header = ["nodes", "residual_conj", "residual_moment", "node_equivariance"].map(String::from);
            save_csv(p, &header, &rows)?;
        }
        if let Some(p) = &out.svg {
            let series = vec![
                Series { label: "residual_conj".into(), points: rows.iter().map(|r| (r[0], r[1])).collect() },
                Series { label: "residual_moment".into(), points: rows.iter().map(|r| (r[0], r[2])).collect() },
            ];
            save(p, &line_chart("residual vs quadrature nodes (log-log)", &series, true))?;
        }
        report.result = json!({ "conjugation": res, "convergence": curve });
    } else {
        report.result = json!({ "conjugation": res });
    }
    Ok(report.settle())
}

fn flow(f: &SystemFile, path: &str, s: &Settings, out: &Outputs) -> Result<Report, CliError> {
    let chart = f.chart.clone().ok_or_else(|| usage("the file has no [chart] block"))?;
    let (h_name, h) = match &s.function {
        Some(n) => (n.clone(), f.function(n).cloned().ok_or_else(|| usage(format!("no function named `{n}`")))?),
        None => {
            let sys = system(f, s.system.as_deref())?;
            ("component 1".to_string(), sys.components()[0].clone())
        }
    };
    let x0 = s.x0.clone().ok_or_else(|| usage("--x0 is required"))?;
    let dt = s.dt.unwrap_or(1e-2);
    let steps = s.steps.unwrap_or(1000);
    let tol = s.tol.unwrap_or(1e-8);
    let mut report = Report::new(
        "flow",
        path,
        json!({ "settings": s, "hamiltonian": h.to_string(), "dt": dt, "steps": steps, "tol": tol }),
    );
    let traj = symplectic_integrate(&h, &chart, &x0, dt, steps)?;
    let hp = Program::compile(std::slice::from_ref(&h), &chart.names())?;
    let h0 = hp.eval(&x0)?[0];
    let mut drift = 0.0f64;
    for z in &traj.points {
        drift = drift.max((hp.eval(z)?[0] - h0).abs());
    }
    report.checks.push(Check::at_most(format!("energy drift of {h_name}"), drift, tol));
    let sys = match system(f, s.system.as_deref()) {
        Ok(sys) if s.system.is_some() || s.function.is_none() => Some(sys),
        _ => None,
    };
    let conservation = match &sys {
        Some(sys) => {
            let c = conserved_along_flow(sys, &traj, tol)?;
            report.checks.push(Check::at_most("integrals drift", c.max_drift, tol));
            Some(c)
        }
        None => None,
    };
    let action = match &s.level {
        Some(levels) if chart.dof() == 1 && !levels.is_empty() => {
            match action_variable_1dof(&h, &chart, levels[0], &ActionConfig::default()) {
                Ok(a) => Some(a),
                Err(e @ (FlowError::NonCompactLevel { .. } | FlowError::CriticalLevel { .. } | FlowError::LevelNotFound { .. })) => {
                    return Ok(report.refuse(e.to_string()));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Some(_) => return Err(usage("--level computes an action variable and needs a 1-DOF chart")),
        None => None,
    };
    if let Some(p) = &out.csv {
        let observed = match &sys {
            Some(sys) => sys.components().to_vec(),
            None => vec![h.clone()],
        };
        let fp = Program::compile(&observed, &chart.names())?;
        let mut header = vec!["t".to_string()];
        header.extend(chart.names().iter().map(|n| n.to_string()));
        header.extend((1..=observed.len()).map(|i| format!("f{i}")));
        let mut rows = Vec::with_capacity(traj.points.len());
        for (t, z) in traj.times.iter().zip(&traj.points) {
            let mut row = vec![*t];
            row.extend(z);
            row.extend(fp.eval(z)?);
            rows.push(row);
        }
        save_csv(p, &header, &rows)?;
    }
    if let Some(p) = &out.svg {
        let n = chart.dof();
        let pts = traj.points.iter().map(|z| (z[0], z[n])).collect();
        let title = format!("orbit in the ({}, {}) plane", chart.positions()[0], chart.momenta()[0]);
        save(p, &line_chart(&title, &[Series { label: h_name.clone(), points: pts }], false))?;
    }
    report.result = json!({
        "scheme": traj.scheme,
        "fixed_point_tol": traj.fixed_point_tol,
        "max_iterations": traj.max_iterations,
        "final_time": traj.times.last(),
        "final_point": traj.last(),
        "energy_drift": drift,
        "conservation": conservation,
        "action": action,
    });
    Ok(report.settle())
}

fn reduce(f: &SystemFile, path: &str, s: &Settings) -> Result<Report, CliError> {
    let sys = system(f, s.system.as_deref())?;
    let seed = s.seed.unwrap_or(17);
    let cfg = ReduceConfig { tol: s.tol.unwrap_or(1e-9), seed, ..ReduceConfig::default() };
    let pcfg = ProfileConfig::default();
    let mut report = Report::new("reduce", path, json!({ "settings": s, "reduce": cfg, "profile": pcfg }));
    let reduced = match s1_reduce(&sys, &cfg) {
        Ok(r) => r,
        Err(e @ FlowError::NotReducible { .. }) => return Ok(report.refuse(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let mut profiles = Vec::new();
    for fit in &reduced.fits {
        let label = format!("f{}", fit.component + 1);
        report.checks.push(Check::at_most(format!("{label} fit residual"), fit.residual, reduced.tol));
        if let [b] = fit.depends_on.as_slice() {
            match radial_profile(&sys.components()[fit.component], sys.chart(), *b, &pcfg) {
                Ok(p) => {
                    report.checks.push(Check::at_most(format!("{label} radial profile"), p.validation_residual, p.validation_bound));
                    profiles.push(json!({
                        "component": fit.component,
                        "block": b,
                        "validation_residual": p.validation_residual,
                        "slope_at_zero": p.slope_at_zero,
                        "monotone": p.monotone,
                        "degenerate_at_zero": p.degenerate_at_zero,
                    }));
                }
                Err(e @ FlowError::NotInvariant { .. }) => {
                    report.checks.push(Check::flag(format!("{label} radial profile"), false, e.to_string()));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    report.result = json!({ "reduced": reduced, "profiles": profiles });
    Ok(report.settle())
}

fn evidence_name(c: &EvidenceCheck) -> String {
    match c {
        EvidenceCheck::Classification => "classification".into(),
        EvidenceCheck::ComponentType { component } => format!("component type f{}", component + 1),
        EvidenceCheck::SingleDegenerateComponent => "single degenerate component".into(),
        EvidenceCheck::S1Invariance { component } => format!("circle invariance f{}", component + 1),
        EvidenceCheck::Reduction { component } => format!("reduction f{}", component + 1),
        EvidenceCheck::RadialProfile { component, block } => format!("radial profile f{} block {}", component + 1, block + 1),
        EvidenceCheck::NormalForm { component, block } => format!("normal form f{} block {}", component + 1, block + 1),
    }
}

fn rigidity_experiment(f: &SystemFile, path: &str, s: &Settings) -> Result<Report, CliError> {
    let sys = system(f, s.system.as_deref())?;
    let mut cfg = ExperimentConfig { point: s.point.clone(), ..ExperimentConfig::default() };
    if let Some(seed) = s.seed {
        cfg.seed = seed;
        cfg.singularity.seed = seed;
    }
    let mut report = Report::new("rigidity-experiment", path, json!({ "settings": s, "experiment": cfg }));
    let r = degenerate_rigidity_experiment(&sys, &cfg)?;
    for e in &r.evidence {
        report.checks.push(Check { name: evidence_name(&e.check), value: e.value, tol: e.tol, pass: e.pass, detail: Some(e.detail.clone()) });
    }
    report.verdict = Some(r.verdict.to_string());
    if r.verdict != Verdict::Rigid {
        report.outcome = Outcome::Refused;
    }
    report.result = to_value(&r);
    Ok(report.settle())
}

fn leaf(f: &SystemFile, path: &str, s: &Settings) -> Result<Report, CliError> {
    let a = system(f, s.system.as_deref())?;
    let b = system(f, Some(s.perturbed.as_deref().ok_or_else(|| usage("--perturbed is required"))?))?;
    let c = s.level.clone().ok_or_else(|| usage("--level is required"))?;
    let mut cfg = LeafConfig { tol: s.tol.unwrap_or(1e-6), ..LeafConfig::default() };
    if let Some(seed) = s.seed {
        cfg.seed = seed;
    }
    let mut report = Report::new("leaf", path, json!({ "settings": s, "leaf": cfg }));
    match elliptic_leaf_rigidity_experiment(&a, &b, &c, &cfg) {
        Ok(r) => {
            report.checks.push(Check::at_most("residual_conj", r.residual_conj, r.tol));
            report.checks.push(Check::at_most("residual_sympl", r.residual_sympl, r.tol));
            report.result = to_value(&r);
            Ok(report.settle())
        }
        Err(e @ (RigidityError::HypothesisViolated(_) | RigidityError::Unsupported(_))) => Ok(report.refuse(e.to_string())),
        Err(e) => Err(e.into()),
    }
}

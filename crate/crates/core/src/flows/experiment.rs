use rand::Rng;
use serde::Serialize;

use super::reduce::{radial_profile, s1_invariance_check, s1_reduce, ProfileConfig, RadialProfile, ReduceConfig, ReducedSystem, S1Config};
use super::FlowError;
use crate::expr::{Expr, Program};
use crate::sampling::seeded;
use crate::singularity::{classify_point, rank_of_differential, s1_weights, SingularPointReport, SingularityConfig, SingularityError};
use crate::symplectic::{DarbouxChart, MomentMapSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    #[serde(rename = "RIGID")]
    Rigid,
    #[serde(rename = "HYPOTHESIS-FAILED")]
    HypothesisFailed,
    #[serde(rename = "UNIMPLEMENTED")]
    Unimplemented,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Rigid => "RIGID",
            Verdict::HypothesisFailed => "HYPOTHESIS-FAILED",
            Verdict::Unimplemented => "UNIMPLEMENTED",
        })
    }
}

/// One re-runnable check the verdict rests on.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvidenceCheck {
    /// Regular, or singular without hyperbolic and focus-focus blocks.
    Classification,
    /// Elliptic (nonzero circle weights) or degenerate (zero Hessian).
    ComponentType { component: usize },
    SingleDegenerateComponent,
    S1Invariance { component: usize },
    /// Component is a polynomial in the invariant of a single block.
    Reduction { component: usize },
    RadialProfile { component: usize, block: usize },
    /// Rescaling the component by the inverse profile gives a
    /// nondegenerate elliptic system.
    NormalForm { component: usize, block: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct Evidence {
    pub check: EvidenceCheck,
    pub detail: String,
    pub value: Option<f64>,
    pub tol: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    /// Defaults to the origin.
    pub point: Option<Vec<f64>>,
    pub singularity: SingularityConfig,
    pub weight_tol: f64,
    pub s1: S1Config,
    pub reduce: ReduceConfig,
    pub profile: ProfileConfig,
    pub normal_form_tol: f64,
    pub normal_form_samples: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            point: None,
            singularity: SingularityConfig::default(),
            weight_tol: 1e-9,
            s1: S1Config::default(),
            reduce: ReduceConfig::default(),
            profile: ProfileConfig::default(),
            normal_form_tol: 1e-6,
            normal_form_samples: 100,
            seed: 19,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub dof: usize,
    pub point: Vec<f64>,
    pub verdict: Verdict,
    /// `regular`, `nondegenerate_elliptic` or `degenerate_s1_reduction`.
    pub path: Option<String>,
    pub failed_clause: Option<String>,
    pub classification: Option<SingularPointReport>,
    pub evidence: Vec<Evidence>,
    pub reduced: Option<ReducedSystem>,
    pub profile: Option<RadialProfile>,
    /// Components after replacing the degenerate one by its block invariant.
    pub normal_form: Option<Vec<String>>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Revalidated {
    pub check: EvidenceCheck,
    pub recorded: bool,
    pub rerun: bool,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Revalidation {
    pub items: Vec<Revalidated>,
    pub consistent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ComponentKind {
    Elliptic,
    Degenerate,
    Failed,
}

fn ev(check: EvidenceCheck, detail: String, value: Option<f64>, tol: Option<f64>, pass: bool) -> Evidence {
    Evidence { check, detail, value, tol, pass }
}

fn point_of(system: &MomentMapSystem, cfg: &ExperimentConfig) -> Vec<f64> {
    cfg.point.clone().unwrap_or_else(|| vec![0.0; system.chart().dim()])
}

/// Evidence plus the path it selects: `Some(true)` when it settles the
/// verdict as rigid, `None` when the degenerate path must continue.
fn check_classification(
    system: &MomentMapSystem,
    p: &[f64],
    cfg: &ExperimentConfig,
) -> Result<(Evidence, Option<bool>, Option<SingularPointReport>), FlowError> {
    let n = system.dof();
    let rank = rank_of_differential(system, p, cfg.singularity.tol_rank)?;
    let check = EvidenceCheck::Classification;
    if rank == n {
        return Ok((ev(check, format!("regular point (rank {rank})"), None, None, true), Some(true), None));
    }
    let rep = match classify_point(system, p, &cfg.singularity) {
        Ok(r) => r,
        Err(e) => return Ok((ev(check, format!("classification failed: {e}"), None, None, false), Some(false), None)),
    };
    let Some(rep) = rep else {
        return Ok((ev(check, "regular point".into(), None, None, true), Some(true), None));
    };
    match rep.williamson {
        Some(wt) if !rep.degenerate => {
            let elliptic = wt.hyperbolic == 0 && wt.focus_focus == 0;
            let (ke, kh, kf) = wt.as_tuple();
            let detail = format!("nondegenerate, rank {}, Williamson type ({ke}, {kh}, {kf})", rep.rank);
            Ok((ev(check, detail, None, None, elliptic), Some(elliptic), Some(rep)))
        }
        _ => {
            let detail = format!("{} point of rank {}", rep.verdict, rep.rank);
            Ok((ev(check, detail, None, None, true), None, Some(rep)))
        }
    }
}

fn check_component(system: &MomentMapSystem, j: usize, p: &[f64], cfg: &ExperimentConfig) -> (Evidence, ComponentKind) {
    let check = EvidenceCheck::ComponentType { component: j };
    match s1_weights(&system.components()[j], system.chart(), p, cfg.weight_tol) {
        Ok(w) if w.iter().any(|x| x.abs() > cfg.weight_tol) => {
            (ev(check, format!("elliptic, circle weights {w:?}"), None, None, true), ComponentKind::Elliptic)
        }
        Ok(_) | Err(SingularityError::ZeroHessian) => {
            (ev(check, "degenerate: vanishing quadratic part".into(), None, None, true), ComponentKind::Degenerate)
        }
        Err(e) => (ev(check, format!("not elliptic: {e}"), None, None, false), ComponentKind::Failed),
    }
}

fn check_single_degenerate(system: &MomentMapSystem, p: &[f64], cfg: &ExperimentConfig) -> (Evidence, Option<usize>) {
    let degenerate: Vec<usize> = (0..system.dof())
        .filter(|&j| check_component(system, j, p, cfg).1 == ComponentKind::Degenerate)
        .collect();
    let pass = degenerate.len() == 1;
    let detail = format!("degenerate components {degenerate:?}; exactly one is supported");
    let value = Some(degenerate.len() as f64);
    (ev(EvidenceCheck::SingleDegenerateComponent, detail, value, None, pass), pass.then(|| degenerate[0]))
}

fn check_invariance(system: &MomentMapSystem, j: usize, cfg: &ExperimentConfig) -> Result<Evidence, FlowError> {
    let r = s1_invariance_check(&system.components()[j], system.chart(), &cfg.s1)?;
    let detail = format!("per-block rotation residuals {:?}", r.per_block);
    Ok(ev(EvidenceCheck::S1Invariance { component: j }, detail, Some(r.residual), Some(r.tol), r.pass))
}

fn check_reduction(
    system: &MomentMapSystem,
    j: usize,
    cfg: &ExperimentConfig,
) -> Result<(Evidence, Option<usize>, Option<ReducedSystem>), FlowError> {
    let check = EvidenceCheck::Reduction { component: j };
    let reduced = match s1_reduce(system, &cfg.reduce) {
        Ok(r) => r,
        Err(e @ FlowError::NotReducible { .. }) => {
            return Ok((ev(check, e.to_string(), None, None, false), None, None));
        }
        Err(e) => return Err(e),
    };
    let fit = &reduced.fits[j];
    let block = match fit.depends_on.as_slice() {
        [b] => Some(*b),
        _ => None,
    };
    let pass = fit.residual <= reduced.tol && block.is_some();
    let detail = format!("f{} = {} (depends on blocks {:?})", j + 1, fit.formula, fit.depends_on);
    Ok((ev(check, detail, Some(fit.residual), Some(reduced.tol), pass), block, Some(reduced)))
}

fn check_profile(
    system: &MomentMapSystem,
    j: usize,
    block: usize,
    cfg: &ExperimentConfig,
) -> Result<(Evidence, Option<RadialProfile>), FlowError> {
    let check = EvidenceCheck::RadialProfile { component: j, block };
    match radial_profile(&system.components()[j], system.chart(), block, &cfg.profile) {
        Ok(p) => {
            let pass = p.monotone && p.increasing_near_zero;
            let detail = format!(
                "profile monotone: {}, increasing near 0: {}, slope at 0: {:.3e}",
                p.monotone, p.increasing_near_zero, p.slope_at_zero
            );
            Ok((ev(check, detail, Some(p.validation_residual), Some(p.validation_bound), pass), Some(p)))
        }
        Err(e @ FlowError::NotInvariant { .. }) => Ok((ev(check, e.to_string(), None, None, false), None)),
        Err(e) => Err(e),
    }
}

fn block_invariant(chart: &DarbouxChart, block: usize) -> Expr {
    let x = Expr::var(&chart.positions()[block]);
    let y = Expr::var(&chart.momenta()[block]);
    x.powi(2) + y.powi(2)
}

fn check_normal_form(
    system: &MomentMapSystem,
    j: usize,
    block: usize,
    p: &[f64],
    cfg: &ExperimentConfig,
) -> Result<(Evidence, Option<Vec<String>>), FlowError> {
    let check = EvidenceCheck::NormalForm { component: j, block };
    let profile = match radial_profile(&system.components()[j], system.chart(), block, &cfg.profile) {
        Ok(pr) => pr,
        Err(e) => return Ok((ev(check, e.to_string(), None, None, false), None)),
    };
    let chart = system.chart();
    let n = chart.dof();
    let prog = Program::compile(&system.components()[j..=j], &chart.names())?;
    let mut rng = seeded(cfg.seed);
    let mut residual = 0.0f64;
    // stay away from s = 0, where the inverse of a flat profile loses digits
    for _ in 0..cfg.normal_form_samples {
        let s = profile.s_max * rng.random_range(0.25f64..=1.0);
        let a = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let mut z = p.to_vec();
        z[block] = s.sqrt() * a.cos();
        z[n + block] = s.sqrt() * a.sin();
        let v = prog.eval(&z)?[0];
        let back = profile.inverse(v).unwrap_or(f64::INFINITY);
        residual = residual.max((back - s).abs());
    }
    let mut comps = system.components().to_vec();
    comps[j] = block_invariant(chart, block);
    let rescaled = MomentMapSystem::new(chart.clone(), comps)?;
    let formulas: Vec<String> = rescaled.components().iter().map(|c| c.to_string()).collect();
    let elliptic = match classify_point(&rescaled, p, &cfg.singularity) {
        Ok(Some(rep)) => rep
            .williamson
            .filter(|_| !rep.degenerate)
            .map(|wt| (wt.hyperbolic == 0 && wt.focus_focus == 0, format!("{:?}", wt.as_tuple()))),
        _ => None,
    };
    let (ok, wt) = elliptic.unwrap_or((false, "none".into()));
    let pass = residual <= cfg.normal_form_tol && ok;
    let detail = format!("rescaled system [{}] has Williamson type {wt}", formulas.join(", "));
    Ok((ev(check, detail, Some(residual), Some(cfg.normal_form_tol), pass), Some(formulas)))
}

/// Re-run one check against `system`.
fn evaluate(check: &EvidenceCheck, system: &MomentMapSystem, p: &[f64], cfg: &ExperimentConfig) -> Result<Evidence, FlowError> {
    Ok(match *check {
        EvidenceCheck::Classification => check_classification(system, p, cfg)?.0,
        EvidenceCheck::ComponentType { component } => check_component(system, component, p, cfg).0,
        EvidenceCheck::SingleDegenerateComponent => check_single_degenerate(system, p, cfg).0,
        EvidenceCheck::S1Invariance { component } => check_invariance(system, component, cfg)?,
        EvidenceCheck::Reduction { component } => check_reduction(system, component, cfg)?.0,
        EvidenceCheck::RadialProfile { component, block } => check_profile(system, component, block, cfg)?.0,
        EvidenceCheck::NormalForm { component, block } => check_normal_form(system, component, block, p, cfg)?.0,
    })
}

/// Rigidity of the singular point `cfg.point` (default: the origin) for
/// systems with at most one degenerate, circle-reducible component.
pub fn degenerate_rigidity_experiment(system: &MomentMapSystem, cfg: &ExperimentConfig) -> Result<ExperimentReport, FlowError> {
    let n = system.dof();
    let p = point_of(system, cfg);
    system.chart().check_point(&p)?;
    let mut report = ExperimentReport {
        dof: n,
        point: p.clone(),
        verdict: Verdict::Unimplemented,
        path: None,
        failed_clause: None,
        classification: None,
        evidence: Vec::new(),
        reduced: None,
        profile: None,
        normal_form: None,
        note: None,
    };
    if n > 2 {
        report.note = Some(format!("{n} degrees of freedom; only 1 and 2 are supported"));
        return Ok(report);
    }
    fn fail(mut r: ExperimentReport, clause: String) -> Result<ExperimentReport, FlowError> {
        r.verdict = Verdict::HypothesisFailed;
        r.failed_clause = Some(clause);
        Ok(r)
    }

    let (e, settled, classification) = check_classification(system, &p, cfg)?;
    report.classification = classification;
    let detail = e.detail.clone();
    report.evidence.push(e);
    match settled {
        Some(true) => {
            report.verdict = Verdict::Rigid;
            report.path = Some(if report.classification.is_none() { "regular" } else { "nondegenerate_elliptic" }.into());
            return Ok(report);
        }
        Some(false) => return fail(report, detail),
        None => {}
    }

    report.path = Some("degenerate_s1_reduction".into());
    for j in 0..n {
        let (e, kind) = check_component(system, j, &p, cfg);
        let detail = e.detail.clone();
        report.evidence.push(e);
        if kind == ComponentKind::Failed {
            return fail(report, format!("component {}: {detail}", j + 1));
        }
    }
    let (e, degenerate) = check_single_degenerate(system, &p, cfg);
    let detail = e.detail.clone();
    report.evidence.push(e);
    let Some(d) = degenerate else {
        return fail(report, detail);
    };

    let e = check_invariance(system, d, cfg)?;
    let pass = e.pass;
    report.evidence.push(e);
    if !pass {
        return fail(report, format!("component {} is not invariant under the block rotations", d + 1));
    }

    let (e, block, reduced) = check_reduction(system, d, cfg)?;
    let (pass, detail) = (e.pass, e.detail.clone());
    report.evidence.push(e);
    report.reduced = reduced;
    let (true, Some(b)) = (pass, block) else {
        return fail(report, format!("reduction failed: {detail}"));
    };

    let (e, profile) = check_profile(system, d, b, cfg)?;
    let (pass, detail) = (e.pass, e.detail.clone());
    report.evidence.push(e);
    report.profile = profile;
    if !pass {
        return fail(report, format!("radial profile: {detail}"));
    }

    let (e, normal_form) = check_normal_form(system, d, b, &p, cfg)?;
    let (pass, detail) = (e.pass, e.detail.clone());
    report.evidence.push(e);
    report.normal_form = normal_form;
    if !pass {
        return fail(report, format!("normal form: {detail}"));
    }
    report.verdict = Verdict::Rigid;
    Ok(report)
}

/// Re-run every evidence item of `report` and compare pass flags.
pub fn revalidate(report: &ExperimentReport, system: &MomentMapSystem, cfg: &ExperimentConfig) -> Result<Revalidation, FlowError> {
    let mut items = Vec::new();
    for e in &report.evidence {
        let again = evaluate(&e.check, system, &report.point, cfg)?;
        items.push(Revalidated { check: e.check.clone(), recorded: e.pass, rerun: again.pass, value: again.value });
    }
    let consistent = items.iter().all(|i| i.recorded == i.rerun);
    Ok(Revalidation { items, consistent })
}
